#pragma once

// Umbrella header.

#include "texvit/backbone.hpp"
#include "texvit/checkpoint.hpp"
#include "texvit/config.hpp"
#include "texvit/corrupt.hpp"
#include "texvit/data.hpp"
#include "texvit/explain.hpp"
#include "texvit/gradcheck.hpp"
#include "texvit/gradcheck_suite.hpp"
#include "texvit/image.hpp"
#include "texvit/metrics.hpp"
#include "texvit/nn.hpp"
#include "texvit/ops.hpp"
#include "texvit/optim.hpp"
#include "texvit/protocol.hpp"
#include "texvit/rng.hpp"
#include "texvit/serialize.hpp"
#include "texvit/tape.hpp"
#include "texvit/tensor.hpp"
#include "texvit/threads.hpp"
#include "texvit/train.hpp"
#include "texvit/train_config.hpp"
#include "texvit/vit.hpp"
