#pragma once

#include "mcsr/core/conv.hpp"
#include "mcsr/core/grad_check.hpp"
#include "mcsr/core/init.hpp"
#include "mcsr/core/norm.hpp"
#include "mcsr/core/ops.hpp"
#include "mcsr/core/optim.hpp"
#include "mcsr/core/random.hpp"
#include "mcsr/core/tensor.hpp"
