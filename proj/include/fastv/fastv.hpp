#pragma once

#include "fastv/costmodel.hpp"
#include "fastv/errors.hpp"
#include "fastv/harness.hpp"
#include "fastv/model.hpp"
#include "fastv/numkernel.hpp"
#include "fastv/profiler.hpp"
#include "fastv/pruning.hpp"
#include "fastv/reference.hpp"
#include "fastv/segments.hpp"
#include "fastv/weights.hpp"
