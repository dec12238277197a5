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

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "delsmm/diffcore/tape.hpp"
#include "delsmm/netparam/mlp.hpp"

namespace delsmm::nn {

/// Shape of the three networks of a structured mechanical model.
struct ArchConfig {
  std::size_t dof = 2;                      // configuration dimension n
  std::vector<std::size_t> hidden{32, 32};  // tanh hidden widths, shared by all nets
  bool conservative = true;                 // no force network, F ≡ 0
  double diag_eps = 1e-3;                   // added to softplus on the Cholesky diagonal

  /// Output width of the mass network: the full lower triangle, n(n+1)/2.
  std::size_t mass_outputs() const { return dof * (dof + 1) / 2; }
  void validate() const;
};

/// Per-network output multipliers, stored as logarithms so that the model
/// class is closed under multiplication by any positive scalar.
struct LogScales {
  double mass = 0.0;
  double potential = 0.0;
  double force = 0.0;
};

/// M_θ(q) = exp(s_M) L Lᵀ, V_θ(q) = exp(s_V) mlp_V(q),
/// F_θ(q, q̇) = exp(s_F) mlp_F([q, q̇]).
struct SmmParams {
  ArchConfig arch;
  Mlp mass_net;
  Mlp potential_net;
  std::optional<Mlp> force_net;
  LogScales log_scales;

  bool conservative() const { return !force_net.has_value(); }
  std::size_t dof() const { return arch.dof; }
  void validate() const;
};

/// Deterministic in `seed`; all log-scales start at zero.
SmmParams init_params(std::uint64_t seed, const ArchConfig& arch);

/// Returns params whose M, V, and F are γ times the originals. Throws
/// DomainError for γ ≤ 0.
SmmParams scale_params(const SmmParams& params, double gamma);

// ---------------------------------------------------------------------------
// Flat view for the optimizer

struct LayoutEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
};

struct ParamLayout {
  ArchConfig arch;
  std::vector<LayoutEntry> entries;
  std::size_t total = 0;
};

struct FlatParams {
  ParamLayout layout;
  std::vector<double> values;
};

ParamLayout layout_of(const ArchConfig& arch);
FlatParams flatten(const SmmParams& params);
/// Exact inverse of flatten. Throws ContractViolation on a length mismatch.
SmmParams unflatten(const FlatParams& flat);

// ---------------------------------------------------------------------------
// Tape evaluation

/// An SMM whose parameters are tape leaves, in layout order.
struct BoundSmm {
  std::size_t dof = 0;
  double diag_eps = 1e-3;
  BoundMlp mass_net;
  BoundMlp potential_net;
  std::optional<BoundMlp> force_net;
  ad::Var mass_log_scale;
  ad::Var potential_log_scale;
  ad::Var force_log_scale;
  std::vector<ad::Var> leaves;

  bool conservative() const { return !force_net.has_value(); }
  /// Concatenates the adjoints of all leaves in layout order.
  std::vector<double> flat_gradient(const ad::Gradients& g) const;
};

/// Records the parameters on `tape`, as variables when `differentiable`,
/// otherwise as constants.
BoundSmm bind(ad::Tape& tape, const SmmParams& params, bool differentiable);

/// Row-wise mass matrices for configurations q [B×n] → [B×n²].
ad::Var mass_rows(const BoundSmm& smm, ad::Var q);
/// [B×n] → [B×1]
ad::Var potential_rows(const BoundSmm& smm, ad::Var q);
/// ([B×n], [B×n]) → [B×n]. Throws ContractViolation for a conservative model.
ad::Var force_rows(const BoundSmm& smm, ad::Var q, ad::Var qdot);

// ---------------------------------------------------------------------------
// Pointwise evaluation

Eigen::MatrixXd mass_matrix(const SmmParams& params, const Eigen::VectorXd& q);
double potential(const SmmParams& params, const Eigen::VectorXd& q);
/// Throws ContractViolation for a conservative model.
Eigen::VectorXd force(const SmmParams& params, const Eigen::VectorXd& q,
                      const Eigen::VectorXd& qdot);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  SmmParams params;
  std::uint64_t seed = 0;
};

/// JSON with the architecture, layout descriptor, flat parameter array and
/// seed. Doubles are written with round-trip precision.
std::string checkpoint_to_json(const SmmParams& params, std::uint64_t seed);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const SmmParams& params, std::uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace delsmm::nn
