#pragma once

// Umbrella header: the whole library.

#include "ssrfcn/adam.hpp"
#include "ssrfcn/dataset.hpp"
#include "ssrfcn/error.hpp"
#include "ssrfcn/heatmap.hpp"
#include "ssrfcn/image_io.hpp"
#include "ssrfcn/layers.hpp"
#include "ssrfcn/metrics.hpp"
#include "ssrfcn/model.hpp"
#include "ssrfcn/model_io.hpp"
#include "ssrfcn/protocol.hpp"
#include "ssrfcn/region.hpp"
#include "ssrfcn/rng.hpp"
#include "ssrfcn/synth.hpp"
#include "ssrfcn/tensor.hpp"
#include "ssrfcn/training.hpp"
