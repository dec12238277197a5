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

#include "delsmm/netparam/smm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "delsmm/errors.hpp"

namespace delsmm::nn {

using ad::Tensor;
using ad::Var;

void ArchConfig::validate() const {
  if (dof == 0) throw ConfigError("ArchConfig: dof must be positive");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("ArchConfig: hidden widths must be positive");
  }
  if (!(diag_eps > 0.0)) throw ConfigError("ArchConfig: diag_eps must be positive");
}

void SmmParams::validate() const {
  arch.validate();
  mass_net.validate();
  potential_net.validate();
  if (mass_net.input_dim() != arch.dof || mass_net.output_dim() != arch.mass_outputs()) {
    throw ContractViolation("SmmParams: mass net has wrong input/output width");
  }
  if (potential_net.input_dim() != arch.dof || potential_net.output_dim() != 1) {
    throw ContractViolation("SmmParams: potential net has wrong input/output width");
  }
  if (arch.conservative != conservative()) {
    throw ContractViolation("SmmParams: conservative flag disagrees with force net presence");
  }
  if (force_net) {
    force_net->validate();
    if (force_net->input_dim() != 2 * arch.dof || force_net->output_dim() != arch.dof) {
      throw ContractViolation("SmmParams: force net has wrong input/output width");
    }
  }
}

SmmParams init_params(std::uint64_t seed, const ArchConfig& arch) {
  arch.validate();
  std::mt19937_64 rng(seed);
  SmmParams p;
  p.arch = arch;
  p.mass_net = make_mlp(arch.dof, arch.hidden, arch.mass_outputs(), rng);
  p.potential_net = make_mlp(arch.dof, arch.hidden, 1, rng);
  if (!arch.conservative) p.force_net = make_mlp(2 * arch.dof, arch.hidden, arch.dof, rng);
  return p;
}

SmmParams scale_params(const SmmParams& params, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw DomainError("scale_params: gamma must be positive and finite");
  }
  SmmParams out = params;
  const double shift = std::log(gamma);
  out.log_scales.mass += shift;
  out.log_scales.potential += shift;
  out.log_scales.force += shift;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <class Visit>
void visit_tensors(const ArchConfig& arch, Visit&& visit) {
  auto net = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    std::size_t prev = in;
    std::size_t index = 0;
    auto layer = [&](std::size_t width) {
      const std::string base = prefix + "." + std::to_string(index++);
      visit(base + ".weight", width, prev);
      visit(base + ".bias", std::size_t{1}, width);
      prev = width;
    };
    for (std::size_t h : arch.hidden) layer(h);
    layer(out);
  };
  net("mass", arch.dof, arch.mass_outputs());
  net("potential", arch.dof, 1);
  if (!arch.conservative) net("force", 2 * arch.dof, arch.dof);
  visit(std::string("log_scale.mass"), std::size_t{1}, std::size_t{1});
  visit(std::string("log_scale.potential"), std::size_t{1}, std::size_t{1});
  if (!arch.conservative) visit(std::string("log_scale.force"), std::size_t{1}, std::size_t{1});
}

// Tensors of `params` in layout order.
std::vector<const Tensor*> tensors_of(const SmmParams& p, std::vector<Tensor>& scratch) {
  std::vector<const Tensor*> out;
  auto net = [&](const Mlp& m) {
    for (const Layer& l : m.layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  };
  net(p.mass_net);
  net(p.potential_net);
  if (p.force_net) net(*p.force_net);
  scratch.clear();
  scratch.reserve(3);
  scratch.push_back(Tensor::scalar(p.log_scales.mass));
  scratch.push_back(Tensor::scalar(p.log_scales.potential));
  if (p.force_net) scratch.push_back(Tensor::scalar(p.log_scales.force));
  for (const Tensor& t : scratch) out.push_back(&t);
  return out;
}

}  // namespace

ParamLayout layout_of(const ArchConfig& arch) {
  ParamLayout layout;
  layout.arch = arch;
  visit_tensors(arch, [&](const std::string& name, std::size_t rows, std::size_t cols) {
    layout.entries.push_back({name, rows, cols, layout.total});
    layout.total += rows * cols;
  });
  return layout;
}

FlatParams flatten(const SmmParams& params) {
  params.validate();
  FlatParams flat;
  flat.layout = layout_of(params.arch);
  flat.values.reserve(flat.layout.total);
  std::vector<Tensor> scratch;
  for (const Tensor* t : tensors_of(params, scratch)) {
    flat.values.insert(flat.values.end(), t->storage().begin(), t->storage().end());
  }
  return flat;
}

SmmParams unflatten(const FlatParams& flat) {
  const ParamLayout expected = layout_of(flat.layout.arch);
  if (flat.values.size() != expected.total || flat.layout.total != expected.total ||
      flat.layout.entries.size() != expected.entries.size()) {
    throw ContractViolation("unflatten: parameter vector does not match the layout");
  }
  auto take = [&](std::size_t i) {
    const LayoutEntry& e = expected.entries[i];
    const LayoutEntry& g = flat.layout.entries[i];
    if (e.name != g.name || e.rows != g.rows || e.cols != g.cols || e.offset != g.offset) {
      throw ContractViolation("unflatten: layout entry '" + g.name + "' does not match");
    }
    const auto begin = flat.values.begin() + static_cast<std::ptrdiff_t>(e.offset);
    return Tensor(e.rows, e.cols,
                  std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(e.rows * e.cols)));
  };
  const ArchConfig& arch = flat.layout.arch;
  SmmParams p;
  p.arch = arch;
  std::size_t cursor = 0;
  auto net = [&]() {
    Mlp m;
    const std::size_t layers = arch.hidden.size() + 1;
    for (std::size_t i = 0; i < layers; ++i) {
      Tensor w = take(cursor++);
      Tensor b = take(cursor++);
      m.layers.push_back(
          {std::move(w), std::move(b), i + 1 == layers ? Activation::kLinear : Activation::kTanh});
    }
    return m;
  };
  p.mass_net = net();
  p.potential_net = net();
  if (!arch.conservative) p.force_net = net();
  p.log_scales.mass = take(cursor++).item();
  p.log_scales.potential = take(cursor++).item();
  if (!arch.conservative) p.log_scales.force = take(cursor++).item();
  return p;
}

// ---------------------------------------------------------------------------

std::vector<double> BoundSmm::flat_gradient(const ad::Gradients& g) const {
  std::vector<double> out;
  for (Var leaf : leaves) {
    const Tensor t = g[leaf];
    out.insert(out.end(), t.storage().begin(), t.storage().end());
  }
  return out;
}

BoundSmm bind(ad::Tape& tape, const SmmParams& params, bool differentiable) {
  auto leaf = [&](const Tensor& t) { return differentiable ? tape.variable(t) : tape.constant(t); };
  BoundSmm b;
  b.dof = params.dof();
  b.diag_eps = params.arch.diag_eps;
  auto net = [&](const Mlp& m) {
    BoundMlp out;
    for (const Layer& l : m.layers) {
      out.layers.push_back({leaf(l.weight), leaf(l.bias), l.activation});
      b.leaves.push_back(out.layers.back().weight);
      b.leaves.push_back(out.layers.back().bias);
    }
    return out;
  };
  b.mass_net = net(params.mass_net);
  b.potential_net = net(params.potential_net);
  if (params.force_net) b.force_net = net(*params.force_net);
  b.mass_log_scale = leaf(Tensor::scalar(params.log_scales.mass));
  b.potential_log_scale = leaf(Tensor::scalar(params.log_scales.potential));
  b.leaves.push_back(b.mass_log_scale);
  b.leaves.push_back(b.potential_log_scale);
  if (params.force_net) {
    b.force_log_scale = leaf(Tensor::scalar(params.log_scales.force));
    b.leaves.push_back(b.force_log_scale);
  }
  return b;
}

Var mass_rows(const BoundSmm& smm, Var q) {
  const std::size_t n = smm.dof;
  if (q.cols() != n) throw ContractViolation("mass_rows: configuration width mismatch");
  const Var raw = mlp_forward(smm.mass_net, q);
  // Lower-triangular factor, row-major over the triangle.
  std::vector<Var> factor(n * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j, ++k) {
      Var entry = ad::slice_cols(raw, k, 1);
      if (i == j) entry = ad::affine(ad::softplus(entry), 1.0, smm.diag_eps);
      factor[i * n + j] = entry;
    }
  }
  std::vector<Var> entries(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      Var s = ad::mul(factor[i * n], factor[j * n]);
      for (std::size_t c = 1; c <= j; ++c) {
        s = ad::add(s, ad::mul(factor[i * n + c], factor[j * n + c]));
      }
      entries[i * n + j] = s;
      entries[j * n + i] = s;
    }
  }
  return ad::mul(ad::concat_cols(entries), ad::exp(smm.mass_log_scale));
}

Var potential_rows(const BoundSmm& smm, Var q) {
  if (q.cols() != smm.dof) throw ContractViolation("potential_rows: configuration width mismatch");
  return ad::mul(mlp_forward(smm.potential_net, q), ad::exp(smm.potential_log_scale));
}

Var force_rows(const BoundSmm& smm, Var q, Var qdot) {
  if (!smm.force_net) throw ContractViolation("force_rows: conservative model has no force net");
  if (q.cols() != smm.dof || qdot.cols() != smm.dof) {
    throw ContractViolation("force_rows: state width mismatch");
  }
  const Var parts[] = {q, qdot};
  return ad::mul(mlp_forward(*smm.force_net, ad::concat_cols(parts)),
                 ad::exp(smm.force_log_scale));
}

// ---------------------------------------------------------------------------

namespace {

Tensor as_row(const Eigen::VectorXd& v) {
  return Tensor(1, static_cast<std::size_t>(v.size()),
                std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

Eigen::MatrixXd mass_matrix(const SmmParams& params, const Eigen::VectorXd& q) {
  ad::Tape tape;
  const BoundSmm b = bind(tape, params, false);
  const Tensor m = mass_rows(b, tape.constant(as_row(q))).value();
  const auto n = static_cast<Eigen::Index>(params.dof());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = m[static_cast<std::size_t>(i * n + j)];
  }
  return out;
}

double potential(const SmmParams& params, const Eigen::VectorXd& q) {
  ad::Tape tape;
  const BoundSmm b = bind(tape, params, false);
  return potential_rows(b, tape.constant(as_row(q))).value().item();
}

Eigen::VectorXd force(const SmmParams& params, const Eigen::VectorXd& q,
                      const Eigen::VectorXd& qdot) {
  if (params.conservative()) throw ContractViolation("force: conservative model has F ≡ 0");
  ad::Tape tape;
  const BoundSmm b = bind(tape, params, false);
  const Tensor f = force_rows(b, tape.constant(as_row(q)), tape.constant(as_row(qdot))).value();
  return Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json arch_to_json(const ArchConfig& a) {
  return json{{"dof", a.dof},
              {"hidden", a.hidden},
              {"conservative", a.conservative},
              {"diag_eps", a.diag_eps},
              {"activation", "tanh"}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.dof = j.at("dof").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  a.conservative = j.at("conservative").get<bool>();
  a.diag_eps = j.value("diag_eps", 1e-3);
  a.validate();
  return a;
}

}  // namespace

std::string checkpoint_to_json(const SmmParams& params, std::uint64_t seed) {
  const FlatParams flat = flatten(params);
  json layout = json::array();
  for (const LayoutEntry& e : flat.layout.entries) {
    layout.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}, {"offset", e.offset}});
  }
  const json j{{"format", "delsmm-checkpoint/1"},
               {"arch", arch_to_json(params.arch)},
               {"seed", seed},
               {"layout", layout},
               {"params", flat.values}};
  return j.dump(1);
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  if (j.value("format", "") != "delsmm-checkpoint/1") {
    throw ContractViolation("checkpoint: unknown format tag");
  }
  FlatParams flat;
  flat.layout.arch = arch_from_json(j.at("arch"));
  for (const json& e : j.at("layout")) {
    flat.layout.entries.push_back({e.at("name").get<std::string>(), e.at("rows").get<std::size_t>(),
                                   e.at("cols").get<std::size_t>(),
                                   e.at("offset").get<std::size_t>()});
  }
  flat.values = j.at("params").get<std::vector<double>>();
  flat.layout.total = flat.values.size();
  Checkpoint c{unflatten(flat), j.at("seed").get<std::uint64_t>()};
  c.params.validate();
  return c;
}

void save_checkpoint(const std::string& path, const SmmParams& params, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << checkpoint_to_json(params, seed) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace delsmm::nn
