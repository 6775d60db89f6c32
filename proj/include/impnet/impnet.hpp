#pragma once

#include "impnet/autograd.hpp"
#include "impnet/bench.hpp"
#include "impnet/checkpoint.hpp"
#include "impnet/data.hpp"
#include "impnet/grad_check.hpp"
#include "impnet/layers.hpp"
#include "impnet/model.hpp"
#include "impnet/ops.hpp"
#include "impnet/tensor.hpp"
#include "impnet/training.hpp"
