#pragma once

// Umbrella header.

#include "deesco/branches.hpp"
#include "deesco/checkpoint.hpp"
#include "deesco/config.hpp"
#include "deesco/dataset.hpp"
#include "deesco/ensemble.hpp"
#include "deesco/errors.hpp"
#include "deesco/folds.hpp"
#include "deesco/gradcheck.hpp"
#include "deesco/gradcheck_suite.hpp"
#include "deesco/heatmap.hpp"
#include "deesco/loss.hpp"
#include "deesco/metrics.hpp"
#include "deesco/ops.hpp"
#include "deesco/optim.hpp"
#include "deesco/pgm.hpp"
#include "deesco/rng.hpp"
#include "deesco/synth.hpp"
#include "deesco/tensor.hpp"
#include "deesco/trainer.hpp"
