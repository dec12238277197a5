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

#include "delsmm/diffcore/tape.hpp"
#include "delsmm/mechanics/system.hpp"
#include "delsmm/netparam/smm.hpp"

namespace delsmm::mech {

/// Lagrangian terms for a batch of states (q, q̇), one state per row.
struct BatchTerms {
  ad::Var mass;       // [B×n²] row-major M(q)
  ad::Var momentum;   // [B×n]  M(q) q̇
  ad::Var lq;         // [B×n]  ∂L/∂q
  ad::Var coriolis;   // [B×n]  (∂²L/∂q̇∂q) q̇; invalid unless requested
  ad::Var force;      // [B×n]  F(q, q̇); invalid for a conservative model
};

/// Tape-level view of a Lagrangian system over batches of states.
class BatchDynamics {
 public:
  virtual ~BatchDynamics() = default;
  virtual std::size_t dof() const = 0;
  virtual ad::Tape& tape() const = 0;
  /// [B×n] → [B×n²]
  virtual ad::Var mass_rows(ad::Var q) const = 0;
  virtual BatchTerms terms(ad::Var q, ad::Var qdot, bool with_coriolis) const = 0;
};

/// SMM bound to a tape. Position derivatives are recorded with Tape::jvp, so
/// every term stays differentiable in the network parameters.
class SmmBatchDynamics final : public BatchDynamics {
 public:
  SmmBatchDynamics(ad::Tape& tape, nn::BoundSmm smm) : tape_(&tape), smm_(std::move(smm)) {}

  std::size_t dof() const override { return smm_.dof; }
  ad::Tape& tape() const override { return *tape_; }
  ad::Var mass_rows(ad::Var q) const override;
  BatchTerms terms(ad::Var q, ad::Var qdot, bool with_coriolis) const override;

  const nn::BoundSmm& smm() const { return smm_; }

 private:
  ad::Tape* tape_;
  nn::BoundSmm smm_;
};

/// Any pointwise system evaluated row by row; the results enter the tape as
/// constants.
class ConstantBatchDynamics final : public BatchDynamics {
 public:
  ConstantBatchDynamics(ad::Tape& tape, const LagrangianSystem& sys) : tape_(&tape), sys_(&sys) {}

  std::size_t dof() const override { return sys_->dof(); }
  ad::Tape& tape() const override { return *tape_; }
  ad::Var mass_rows(ad::Var q) const override;
  BatchTerms terms(ad::Var q, ad::Var qdot, bool with_coriolis) const override;

 private:
  ad::Tape* tape_;
  const LagrangianSystem* sys_;
};

/// DEL vectors for row-aligned triples [B×n] each → [B×n].
ad::Var batch_del(const BatchDynamics& dyn, ad::Var q1, ad::Var q2, ad::Var q3, double h);
/// Accelerations for states [B×n] → [B×n]. Throws PdFailure.
ad::Var batch_acceleration(const BatchDynamics& dyn, ad::Var q, ad::Var qdot);

}  // namespace delsmm::mech
