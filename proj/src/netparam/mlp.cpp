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

#include "delsmm/netparam/mlp.hpp"

#include <cmath>
#include <string>

#include "delsmm/errors.hpp"

namespace delsmm::nn {

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void Mlp::validate() const {
  if (layers.empty()) throw ContractViolation("Mlp: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.out_dim()) {
      throw ContractViolation("Mlp: bias of layer " + std::to_string(i) + " has wrong shape");
    }
    if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
      throw ContractViolation("Mlp: layer " + std::to_string(i) + " input does not chain");
    }
  }
  if (layers.back().activation != Activation::kLinear) {
    throw ContractViolation("Mlp: final layer must be linear");
  }
}

Mlp make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
             std::size_t output_dim, std::mt19937_64& rng) {
  Mlp net;
  std::size_t in = input_dim;
  auto add_layer = [&](std::size_t out, Activation act) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer l{ad::Tensor(out, in), ad::Tensor(1, out), act};
    for (double& w : l.weight.values()) w = u(rng);
    for (double& b : l.bias.values()) b = u(rng);
    net.layers.push_back(std::move(l));
    in = out;
  };
  for (std::size_t h : hidden) add_layer(h, Activation::kTanh);
  add_layer(output_dim, Activation::kLinear);
  return net;
}

ad::Tensor mlp_forward(const Mlp& net, const ad::Tensor& x) {
  ad::Tape tape;
  BoundMlp bound;
  for (const Layer& l : net.layers) {
    bound.layers.push_back({tape.constant(l.weight), tape.constant(l.bias), l.activation});
  }
  return mlp_forward(bound, tape.constant(x)).value();
}

ad::Var mlp_forward(const BoundMlp& net, ad::Var x) {
  ad::Var h = x;
  for (const auto& l : net.layers) {
    h = ad::add(ad::matmul_nt(h, l.weight), l.bias);
    if (l.activation == Activation::kTanh) h = ad::tanh(h);
  }
  return h;
}

}  // namespace delsmm::nn
