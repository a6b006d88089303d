// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "foxacp/analysis.hpp"
#include "foxacp/blocked.hpp"
#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"
#include "foxacp/decode.hpp"
#include "foxacp/grid.hpp"
#include "foxacp/pruning.hpp"
#include "foxacp/reference.hpp"
#include "foxacp/trace.hpp"
#include "foxacp/workload.hpp"
