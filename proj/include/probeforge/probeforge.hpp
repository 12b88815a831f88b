#pragma once

#include "probeforge/control_task.hpp"
#include "probeforge/corpus.hpp"
#include "probeforge/matrix.hpp"
#include "probeforge/metrics.hpp"
#include "probeforge/probes.hpp"
#include "probeforge/repr_store.hpp"
#include "probeforge/rng.hpp"
#include "probeforge/runner.hpp"
#include "probeforge/trainer.hpp"
