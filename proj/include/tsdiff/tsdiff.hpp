#pragma once

// Umbrella header: conditional diffusion imputation for multivariate
// time-series windows, with a few-step deterministic sampler, rule-based
// baselines, intrinsic metrics (MAE, CRPS), and a downstream
// failure-prediction harness.

#include "tsdiff/baselines.hpp"
#include "tsdiff/cli.hpp"
#include "tsdiff/core.hpp"
#include "tsdiff/denoiser.hpp"
#include "tsdiff/downstream.hpp"
#include "tsdiff/matrix.hpp"
#include "tsdiff/metrics.hpp"
#include "tsdiff/rng.hpp"
#include "tsdiff/sampler.hpp"
#include "tsdiff/schedule.hpp"
#include "tsdiff/stats.hpp"
#include "tsdiff/synthdata.hpp"
#include "tsdiff/trainer.hpp"
