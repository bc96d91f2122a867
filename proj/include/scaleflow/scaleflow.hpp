// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "scaleflow/ablate.hpp"
#include "scaleflow/ar_model.hpp"
#include "scaleflow/checkpoint.hpp"
#include "scaleflow/codec.hpp"
#include "scaleflow/common.hpp"
#include "scaleflow/config.hpp"
#include "scaleflow/dataset.hpp"
#include "scaleflow/engine.hpp"
#include "scaleflow/evaluate.hpp"
#include "scaleflow/flow_model.hpp"
#include "scaleflow/image_io.hpp"
#include "scaleflow/nn.hpp"
#include "scaleflow/pyramid.hpp"
#include "scaleflow/random.hpp"
#include "scaleflow/tensor.hpp"
#include "scaleflow/threading.hpp"
