#pragma once

// Umbrella header.

#include "olbp/checkpoint.hpp"
#include "olbp/common.hpp"
#include "olbp/config.hpp"
#include "olbp/dataset.hpp"
#include "olbp/fixation.hpp"
#include "olbp/gradcheck.hpp"
#include "olbp/gradcheck_suite.hpp"
#include "olbp/image.hpp"
#include "olbp/init.hpp"
#include "olbp/metrics.hpp"
#include "olbp/model.hpp"
#include "olbp/morphology.hpp"
#include "olbp/ops.hpp"
#include "olbp/parallel.hpp"
#include "olbp/synth.hpp"
#include "olbp/tape.hpp"
#include "olbp/tensor.hpp"
#include "olbp/trainer.hpp"
#include "olbp/version.hpp"
