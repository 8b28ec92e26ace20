#pragma once

// Penalized piecewise constant hazard mixed-effects survival models with a
// factor decomposition of the random effects: data preparation, penalty
// kernels, the MCECM fitting engine, tuning-parameter search, latent factor
// count estimation, and a simulation benchmark.

#include "pchmm/csv.hpp"
#include "pchmm/data.hpp"
#include "pchmm/error.hpp"
#include "pchmm/mcecm.hpp"
#include "pchmm/mstep.hpp"
#include "pchmm/params.hpp"
#include "pchmm/penalty.hpp"
#include "pchmm/rng.hpp"
#include "pchmm/sampler.hpp"
#include "pchmm/selection.hpp"
#include "pchmm/simulate.hpp"
