// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "modelab/tensor.hpp"

namespace modelab::detail {

// Builds an op output; records a graph node only when tracking is enabled and
// some input requires grad.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> inputs, std::function<void(const TensorImpl&)> bw);

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what);

}  // namespace modelab::detail
