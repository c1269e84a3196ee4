#pragma once

#include "requant/calibration.hpp"
#include "requant/errors.hpp"
#include "requant/graph.hpp"
#include "requant/interpreter.hpp"
#include "requant/io.hpp"
#include "requant/metrics.hpp"
#include "requant/multiplier.hpp"
#include "requant/passes.hpp"
#include "requant/quant.hpp"
#include "requant/tensor.hpp"
