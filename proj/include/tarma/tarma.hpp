#pragma once

#include "tarma/error.hpp"
#include "tarma/estimation.hpp"
#include "tarma/evaluation.hpp"
#include "tarma/model.hpp"
#include "tarma/robust_loss.hpp"
#include "tarma/rng.hpp"
#include "tarma/simulate.hpp"
#include "tarma/timeseries.hpp"
#include "tarma/version.hpp"
