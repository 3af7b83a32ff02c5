#pragma once

// Umbrella header.

#include "error.hpp"
#include "tensor.hpp"
#include "ops.hpp"
#include "autograd.hpp"
#include "gradcheck.hpp"
#include "networks.hpp"
#include "sampler.hpp"
#include "metrics.hpp"
#include "data.hpp"
#include "bayesian_gan.hpp"
#include "experiment.hpp"
