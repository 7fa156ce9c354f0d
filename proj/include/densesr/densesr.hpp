// Convenience umbrella header: pulls in the whole library.
#pragma once

#include "densesr/checkpoint.hpp"
#include "densesr/common.hpp"
#include "densesr/config.hpp"
#include "densesr/dataset.hpp"
#include "densesr/image_ops.hpp"
#include "densesr/layers.hpp"
#include "densesr/losses.hpp"
#include "densesr/models.hpp"
#include "densesr/ops.hpp"
#include "densesr/optimizer.hpp"
#include "densesr/png_io.hpp"
#include "densesr/psnr.hpp"
#include "densesr/rng.hpp"
#include "densesr/scene.hpp"
#include "densesr/tape.hpp"
#include "densesr/tensor.hpp"
#include "densesr/train.hpp"
