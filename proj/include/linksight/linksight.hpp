#pragma once

// Umbrella header for the linksight toolkit: RSSI trace handling, synthetic
// anomaly injection, time-series-to-image transforms, a small convolutional
// classifier with resource accounting, guided-backpropagation saliency, a
// DTW nearest-neighbor baseline and the evaluation protocol.

#include "linksight/baseline.hpp"
#include "linksight/dataset_io.hpp"
#include "linksight/error.hpp"
#include "linksight/eval.hpp"
#include "linksight/explain.hpp"
#include "linksight/imaging.hpp"
#include "linksight/inject.hpp"
#include "linksight/nn.hpp"
#include "linksight/rng.hpp"
#include "linksight/trace.hpp"
#include "linksight/util.hpp"
