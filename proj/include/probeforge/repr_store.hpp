#pragma once

// Per-token representation files and synthetic representation generators.
//
// RPR1 format, little-endian throughout:
//   magic "RPR1" | version u32 = 1 | d u32 | sentence count u64
// followed per sentence by a u32 token count T and T*d float32 values in
// row-major order. The 20-byte header is validated before anything sized by
// its fields is allocated, and read errors carry the byte offset at fault.
//
// Values are float32 on disk; compute paths convert to float64.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "probeforge/corpus.hpp"
#include "probeforge/matrix.hpp"
#include "probeforge/rng.hpp"

namespace probeforge {

static_assert(std::numeric_limits<float>::is_iec559, "float32 storage requires IEEE 754");

struct ReprIoError : std::runtime_error {
  ReprIoError(std::uint64_t at, const std::string& message)
      : std::runtime_error(message + " (offset " + std::to_string(at) + ")"), offset(at) {}
  std::uint64_t offset;
};

// One sentence's h_{1:T}: a T x d float32 matrix, row i holding h_i.
struct SentenceReprs {
  std::size_t t = 0, d = 0;
  std::vector<float> data;  // row-major, t*d entries

  SentenceReprs() = default;
  SentenceReprs(std::size_t t_, std::size_t d_) : t(t_), d(d_), data(t_ * d_, 0.0f) {}

  float* row(std::size_t i) { return data.data() + i * d; }
  const float* row(std::size_t i) const { return data.data() + i * d; }

  bool operator==(const SentenceReprs& other) const = default;
};

using ReprFile = std::vector<SentenceReprs>;

namespace detail {

constexpr char kReprMagic[4] = {'R', 'P', 'R', '1'};
constexpr std::uint32_t kReprVersion = 1;

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

// Reads exactly n bytes or throws, advancing pos past what was consumed.
inline void read_exact(std::istream& in, char* buf, std::size_t n, std::uint64_t& pos,
                       const char* what) {
  in.read(buf, static_cast<std::streamsize>(n));
  const std::uint64_t got = static_cast<std::uint64_t>(in.gcount());
  if (got < n)
    throw ReprIoError(pos + got, std::string("truncated file while reading ") + what);
  pos += n;
}

inline std::uint32_t get_u32(const char* b) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
  return v;
}

inline std::uint64_t get_u64(const char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
  return v;
}

inline float get_f32(const char* b) { return std::bit_cast<float>(get_u32(b)); }

inline double get_f64(const char* b) { return std::bit_cast<double>(get_u64(b)); }

}  // namespace detail

// Writes the sequence and returns the byte count. d must be uniform across
// sentences and entries finite; pass expected_d for an empty sequence.
inline std::uint64_t write_repr_file(std::span<const SentenceReprs> sentences, std::ostream& out,
                                     std::uint32_t expected_d = 0) {
  std::uint32_t d = expected_d;
  for (const SentenceReprs& s : sentences) {
    if (d == 0 && expected_d == 0) d = static_cast<std::uint32_t>(s.d);
    if (s.d != d)
      throw std::invalid_argument("write_repr_file: sentence has d=" + std::to_string(s.d) +
                                  ", expected " + std::to_string(d));
    for (float x : s.data)
      if (!std::isfinite(x)) throw std::invalid_argument("write_repr_file: non-finite entry");
  }

  out.write(detail::kReprMagic, 4);
  detail::put_u32(out, detail::kReprVersion);
  detail::put_u32(out, d);
  detail::put_u64(out, static_cast<std::uint64_t>(sentences.size()));
  std::uint64_t bytes = 20;
  for (const SentenceReprs& s : sentences) {
    detail::put_u32(out, static_cast<std::uint32_t>(s.t));
    for (float x : s.data) detail::put_f32(out, x);
    bytes += 4 + 4ull * s.data.size();
  }
  if (!out) throw std::runtime_error("write_repr_file: sink write failed");
  return bytes;
}

inline std::uint64_t write_repr_file(std::span<const SentenceReprs> sentences,
                                     const std::string& path, std::uint32_t expected_d = 0) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_repr_file: cannot open " + path);
  return write_repr_file(sentences, out, expected_d);
}

// Exact inverse of write_repr_file. Pass total_size when known so claimed
// sentence lengths are validated before their buffers are allocated.
inline ReprFile read_repr_file(std::istream& in, std::uint64_t total_size = 0) {
  std::uint64_t pos = 0;
  char header[20];
  detail::read_exact(in, header, 4, pos, "magic");
  if (std::memcmp(header, detail::kReprMagic, 4) != 0)
    throw ReprIoError(0, "bad magic; not an RPR1 file");
  detail::read_exact(in, header + 4, 16, pos, "header");
  const std::uint32_t version = detail::get_u32(header + 4);
  if (version != detail::kReprVersion)
    throw ReprIoError(4, "unsupported RPR1 version " + std::to_string(version));
  const std::uint32_t d = detail::get_u32(header + 8);
  const std::uint64_t count = detail::get_u64(header + 12);

  ReprFile sentences;
  if (total_size > 0 && count > (total_size - std::min<std::uint64_t>(total_size, 20)) / 4 + 1)
    throw ReprIoError(12, "claimed sentence count " + std::to_string(count) +
                              " cannot fit in " + std::to_string(total_size) + " bytes");
  sentences.reserve(static_cast<std::size_t>(count));

  std::vector<char> buffer;
  for (std::uint64_t s = 0; s < count; ++s) {
    char tbuf[4];
    detail::read_exact(in, tbuf, 4, pos, "sentence length");
    const std::uint32_t t = detail::get_u32(tbuf);
    const std::uint64_t payload = 4ull * t * d;
    if (total_size > 0 && payload > total_size - std::min<std::uint64_t>(total_size, pos))
      throw ReprIoError(pos, "claimed sentence length " + std::to_string(t) +
                                 " exceeds remaining file size");
    buffer.resize(static_cast<std::size_t>(payload));
    detail::read_exact(in, buffer.data(), buffer.size(), pos, "sentence body");

    SentenceReprs reprs(t, d);
    for (std::size_t i = 0; i < reprs.data.size(); ++i) {
      const float x = detail::get_f32(buffer.data() + 4 * i);
      if (!std::isfinite(x))
        throw ReprIoError(pos - payload + 4 * i, "non-finite representation value");
      reprs.data[i] = x;
    }
    sentences.push_back(std::move(reprs));
  }
  return sentences;
}

inline ReprFile read_repr_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_repr_file: cannot open " + path);
  const std::uint64_t size = std::filesystem::file_size(path);
  return read_repr_file(in, size);
}

// Sentence counts and lengths must match the corpus split exactly.
inline void check_alignment(const ReprFile& reprs, const Split& split, const std::string& what) {
  if (reprs.size() != split.size())
    throw std::invalid_argument(what + ": " + std::to_string(reprs.size()) +
                                " repr sentences vs " + std::to_string(split.size()) +
                                " corpus sentences");
  for (std::size_t i = 0; i < reprs.size(); ++i)
    if (reprs[i].t != static_cast<std::size_t>(split[i].length()))
      throw std::invalid_argument(what + ": sentence " + std::to_string(i) + " has " +
                                  std::to_string(reprs[i].t) + " repr rows vs " +
                                  std::to_string(split[i].length()) + " tokens");
}

inline Matrix to_matrix(const SentenceReprs& reprs) {
  Matrix m(reprs.t, reprs.d);
  for (std::size_t i = 0; i < reprs.data.size(); ++i)
    m.flat()[i] = static_cast<double>(reprs.data[i]);
  return m;
}

// --- synthetic generators ----------------------------------------------
//
// All generators are pure functions of (inputs, seed). Sub-stream salts:
//   type vectors   derive_stream(derive_stream(seed, kSaltTypeVec), type_id)
//   projection     derive_stream(seed, kSaltProjection)
//   noise          derive_stream(derive_stream(derive_stream(seed, kSaltNoise), split), sentence)
//   mix weights    derive_stream(derive_stream(seed, kSaltMix), sentence)

namespace detail {

constexpr std::uint64_t kSaltTypeVec = 0x7f01;
constexpr std::uint64_t kSaltProjection = 0x7f02;
constexpr std::uint64_t kSaltNoise = 0x7f03;
constexpr std::uint64_t kSaltMix = 0x7f04;

inline std::vector<double> type_vector(std::uint64_t seed, std::int32_t type_id, std::size_t dims) {
  Rng rng(derive_stream(derive_stream(seed, kSaltTypeVec), static_cast<std::uint64_t>(type_id)));
  std::vector<double> v(dims);
  for (double& x : v) x = rng.next_gaussian();
  return v;
}

}  // namespace detail

struct SplitReprs {
  ReprFile train, dev, test;

  ReprFile& of(SplitId s) {
    switch (s) {
      case SplitId::train: return train;
      case SplitId::dev: return dev;
      default: return test;
    }
  }
};

// Every word type gets one fixed Gaussian vector; every token of that type
// receives it verbatim in all splits. A stand-in for layers rich in word
// identity.
inline SplitReprs gen_type_identity_reprs(const Corpus& corpus, const Vocabulary& vocab,
                                          std::size_t d, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("gen_type_identity_reprs: d must be >= 1");
  std::vector<std::vector<double>> typevecs(vocab.size());
  SplitReprs out;
  for (SplitId s : {SplitId::train, SplitId::dev, SplitId::test}) {
    const Split& split = corpus.split(s);
    ReprFile& file = out.of(s);
    file.reserve(split.size());
    for (const Sentence& sentence : split) {
      SentenceReprs reprs(static_cast<std::size_t>(sentence.length()), d);
      for (int i = 0; i < sentence.length(); ++i) {
        const std::int32_t id = vocab.id(sentence.tokens[static_cast<std::size_t>(i)].form);
        if (id < 0) throw std::invalid_argument("gen_type_identity_reprs: token type not in vocabulary");
        auto& tv = typevecs[static_cast<std::size_t>(id)];
        if (tv.empty()) tv = detail::type_vector(seed, id, d);
        float* row = reprs.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(tv[j]);
      }
      file.push_back(std::move(reprs));
    }
  }
  return out;
}

// Label-oracle representations: h_i is the fixed orthonormal rotation of
//   [ one-hot(label_i) ; identity_weight * typevec(x_i) ; noise_scale * g ]
// where the channels occupy num_labels, identity_dims and the remaining
// d - num_labels - identity_dims coordinates. The rotation is lossless, so
// the labels stay linearly decodable while the identity channel alone
// carries the word type.
inline ReprFile gen_label_oracle_reprs(const Split& split, SplitId split_id,
                                       const std::vector<std::vector<int>>& labels, int num_labels,
                                       double noise_scale, double identity_weight,
                                       std::size_t identity_dims, std::size_t d,
                                       const Vocabulary& vocab, std::uint64_t seed) {
  if (d < static_cast<std::size_t>(num_labels) + identity_dims)
    throw std::invalid_argument("gen_label_oracle_reprs: d < num_labels + identity_dims");
  if (labels.size() != split.size())
    throw std::invalid_argument("gen_label_oracle_reprs: labels misaligned with split");

  const Matrix q = random_orthonormal(d, derive_stream(seed, detail::kSaltProjection));
  const std::size_t noise_dims = d - static_cast<std::size_t>(num_labels) - identity_dims;
  std::vector<std::vector<double>> typevecs(vocab.size());

  ReprFile file;
  file.reserve(split.size());
  std::vector<double> u(d), h;
  const std::uint64_t split_stream =
      derive_stream(derive_stream(seed, detail::kSaltNoise), static_cast<std::uint64_t>(split_id));
  for (std::size_t s = 0; s < split.size(); ++s) {
    const Sentence& sentence = split[s];
    if (labels[s].size() != sentence.tokens.size())
      throw std::invalid_argument("gen_label_oracle_reprs: labels misaligned at sentence " +
                                  std::to_string(s));
    Rng noise(derive_stream(split_stream, s));
    SentenceReprs reprs(static_cast<std::size_t>(sentence.length()), d);
    for (int i = 0; i < sentence.length(); ++i) {
      const int label = labels[s][static_cast<std::size_t>(i)];
      if (label < 1 || label > num_labels)
        throw std::invalid_argument("gen_label_oracle_reprs: label outside 1..num_labels");
      std::fill(u.begin(), u.end(), 0.0);
      u[static_cast<std::size_t>(label) - 1] = 1.0;
      if (identity_dims > 0) {
        const std::int32_t id = vocab.id(sentence.tokens[static_cast<std::size_t>(i)].form);
        if (id < 0) throw std::invalid_argument("gen_label_oracle_reprs: token type not in vocabulary");
        auto& tv = typevecs[static_cast<std::size_t>(id)];
        if (tv.empty()) tv = detail::type_vector(seed, id, identity_dims);
        for (std::size_t j = 0; j < identity_dims; ++j)
          u[static_cast<std::size_t>(num_labels) + j] = identity_weight * tv[j];
      }
      for (std::size_t j = 0; j < noise_dims; ++j)
        u[static_cast<std::size_t>(num_labels) + identity_dims + j] =
            noise_scale * noise.next_gaussian();
      h = matvec(q, u);
      float* row = reprs.row(static_cast<std::size_t>(i));
      for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(h[j]);
    }
    file.push_back(std::move(reprs));
  }
  return file;
}

// Replaces each h_i with a fixed seeded random convex combination of the
// rows in the window i-r..i+r, clamped at sentence boundaries. Degrades
// direct type identity while keeping vectors in the span of their context.
inline ReprFile gen_contextual_mix_reprs(const Split& split, const ReprFile& base,
                                         int window_radius, std::uint64_t seed) {
  if (window_radius < 0) throw std::invalid_argument("gen_contextual_mix_reprs: negative radius");
  check_alignment(base, split, "gen_contextual_mix_reprs");

  const std::uint64_t mix_stream = derive_stream(seed, detail::kSaltMix);
  ReprFile out;
  out.reserve(base.size());
  std::vector<double> weights;
  for (std::size_t s = 0; s < base.size(); ++s) {
    const SentenceReprs& src = base[s];
    Rng rng(derive_stream(mix_stream, s));
    SentenceReprs mixed(src.t, src.d);
    const int t = static_cast<int>(src.t);
    for (int i = 0; i < t; ++i) {
      const int lo = std::max(0, i - window_radius);
      const int hi = std::min(t - 1, i + window_radius);
      weights.resize(static_cast<std::size_t>(hi - lo + 1));
      double total = 0.0;
      for (double& w : weights) {
        w = rng.next_unit();
        total += w;
      }
      if (total == 0.0) weights.assign(weights.size(), 1.0);  // all-zero draw; weight evenly
      total = 0.0;
      for (double w : weights) total += w;
      float* dst = mixed.row(static_cast<std::size_t>(i));
      for (int j = lo; j <= hi; ++j) {
        const double w = weights[static_cast<std::size_t>(j - lo)] / total;
        const float* srow = src.row(static_cast<std::size_t>(j));
        for (std::size_t c = 0; c < src.d; ++c)
          dst[c] += static_cast<float>(w * static_cast<double>(srow[c]));
      }
    }
    out.push_back(std::move(mixed));
  }
  return out;
}

}  // namespace probeforge
