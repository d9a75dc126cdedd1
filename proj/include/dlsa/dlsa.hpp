#pragma once

#include "dlsa/error.hpp"
#include "dlsa/matrix.hpp"
#include "dlsa/autodiff.hpp"
#include "dlsa/maf_flow.hpp"
#include "dlsa/gmm_latent.hpp"
#include "dlsa/losses.hpp"
#include "dlsa/classifiers.hpp"
#include "dlsa/binary_io.hpp"
#include "dlsa/data_io.hpp"
#include "dlsa/trainer.hpp"
#include "dlsa/cascade.hpp"
#include "dlsa/metrics.hpp"
