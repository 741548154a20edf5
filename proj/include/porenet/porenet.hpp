#pragma once

#include "porenet/error.hpp"
#include "porenet/rng.hpp"
#include "porenet/crystal.hpp"
#include "porenet/coloring.hpp"
#include "porenet/graph.hpp"
#include "porenet/autodiff.hpp"
#include "porenet/model.hpp"
#include "porenet/equivariance.hpp"
#include "porenet/train.hpp"
#include "porenet/dataset.hpp"
#include "porenet/checkpoint.hpp"
#include "porenet/runner.hpp"
