#pragma once

#include "autodiff.hpp"
#include "batch.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "datapipe.hpp"
#include "errors.hpp"
#include "image_io.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "runner.hpp"
#include "svg.hpp"
#include "swin.hpp"
#include "tensor.hpp"
#include "training.hpp"
#include "tsne.hpp"
