#pragma once

#include "fedpft/autodiff/grad_check.hpp"
#include "fedpft/autodiff/ops.hpp"
#include "fedpft/autodiff/sgd.hpp"
#include "fedpft/autodiff/tape.hpp"
#include "fedpft/autodiff/tensor.hpp"
