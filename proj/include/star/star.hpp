#pragma once

#include "star/analysis.hpp"
#include "star/autograd.hpp"
#include "star/config.hpp"
#include "star/dataset.hpp"
#include "star/degrade.hpp"
#include "star/diffusion.hpp"
#include "star/frequency.hpp"
#include "star/io.hpp"
#include "star/losses.hpp"
#include "star/metrics.hpp"
#include "star/network.hpp"
#include "star/ops.hpp"
#include "star/rng.hpp"
#include "star/tensor.hpp"
#include "star/train.hpp"
