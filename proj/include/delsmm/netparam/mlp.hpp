// Copyright 2026 The delsmm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "delsmm/diffcore/tape.hpp"
#include "delsmm/diffcore/tensor.hpp"

namespace delsmm::nn {

enum class Activation : std::uint8_t { kTanh, kLinear };

struct Layer {
  ad::Tensor weight;  // out × in
  ad::Tensor bias;    // 1 × out
  Activation activation = Activation::kTanh;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/// Fully connected network; hidden layers use tanh, the last layer is linear.
struct Mlp {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  std::size_t parameter_count() const;

  /// Throws ContractViolation if dimensions do not chain or the last layer is
  /// not linear.
  void validate() const;
};

/// Uniform(-1/√in, 1/√in) weights and biases.
Mlp make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
             std::size_t output_dim, std::mt19937_64& rng);

/// Plain forward pass over a batch (rows of `x`), no tape.
ad::Tensor mlp_forward(const Mlp& net, const ad::Tensor& x);

/// An Mlp whose weights live on a tape.
struct BoundMlp {
  struct BoundLayer {
    ad::Var weight;
    ad::Var bias;
    Activation activation;
  };
  std::vector<BoundLayer> layers;
};

ad::Var mlp_forward(const BoundMlp& net, ad::Var x);

}  // namespace delsmm::nn
