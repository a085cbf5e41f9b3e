#pragma once

/// Umbrella header for the nnwm library: a small deterministic feed-forward
/// training engine plus neural-network watermark embedders, removal attacks,
/// and robustness metrics.

#include "nnwm/attacks.hpp"
#include "nnwm/carrier.hpp"
#include "nnwm/codec.hpp"
#include "nnwm/dataset.hpp"
#include "nnwm/engine.hpp"
#include "nnwm/experiment.hpp"
#include "nnwm/linalg.hpp"
#include "nnwm/metrics.hpp"
#include "nnwm/network.hpp"
#include "nnwm/optimizer.hpp"
#include "nnwm/prng.hpp"
#include "nnwm/serialize.hpp"
#include "nnwm/tensor.hpp"
#include "nnwm/train.hpp"
#include "nnwm/watermark.hpp"
