#pragma once

// Umbrella header.

#include "scoreperf/abc.hpp"
#include "scoreperf/aligner.hpp"
#include "scoreperf/analysis.hpp"
#include "scoreperf/augment.hpp"
#include "scoreperf/common.hpp"
#include "scoreperf/neural/decoder.hpp"
#include "scoreperf/neural/tensor.hpp"
#include "scoreperf/neural/train.hpp"
#include "scoreperf/perf_ir.hpp"
#include "scoreperf/score_ir.hpp"
#include "scoreperf/synth.hpp"
#include "scoreperf/tokenizer.hpp"
