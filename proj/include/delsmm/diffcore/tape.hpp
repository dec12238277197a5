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
#include <span>
#include <vector>

#include "delsmm/diffcore/tensor.hpp"

namespace delsmm::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid as long as the
/// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr && index_ >= 0; }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  int index_ = -1;
};

enum class OpKind : std::uint8_t {
  kVariable,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kAffine,
  kMatMul,
  kMatMulNT,
  kTanh,
  kSoftplus,
  kExp,
  kLog,
  kReciprocal,
  kSum,
  kSumRows,
  kSumCols,
  kNormSq,
  kSliceCols,
  kSliceRows,
  kConcatCols,
  kConcatRows,
  kTranspose,
  kBroadcast,
  kBatchMatVec,
  kBatchSolve,
  kBatchLogdet,
  kCholesky,
  kLogdet,
};

const char* op_name(OpKind op);

/// Adjoints produced by one reverse sweep.
class Gradients {
 public:
  /// Adjoint of `v`; a zero tensor of v's shape if nothing flowed into it.
  Tensor operator[](Var v) const;
  bool has(Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> adjoints_;
  std::vector<bool> touched_;
};

/// One (input, direction) pair for a forward-mode sweep.
struct Seed {
  Var input;
  Var direction;
};

/// Append-only record of primitive operations. Every operation stores its
/// value; `backward` runs one reverse sweep over the recorded nodes and `jvp`
/// appends the tangent computation as new nodes so it can itself be
/// differentiated.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable leaf.
  Var variable(Tensor value);
  /// Leaf excluded from differentiation.
  Var constant(Tensor value);
  Var scalar_constant(double v) { return constant(Tensor::scalar(v)); }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(int index) const { return nodes_[static_cast<std::size_t>(index)].value; }
  OpKind kind(int index) const { return nodes_[static_cast<std::size_t>(index)].op; }

  /// Reverse sweep seeded with d(output)/d(output) = 1. `output` must be 1×1.
  Gradients backward(Var output) const;

  /// Forward-mode directional derivative of `output` along the given seeds,
  /// recorded as tape operations. Leaves without a seed have zero tangent.
  /// Throws NonDifferentiablePrimitive if the dependency path contains an
  /// operation without a tangent rule.
  Var jvp(Var output, std::span<const Seed> seeds);

  // Primitive recording; prefer the free functions below.
  struct Node {
    OpKind op = OpKind::kConstant;
    int a = -1;
    int b = -1;
    std::vector<int> inputs;  // concat only
    double s0 = 0.0;
    double s1 = 0.0;
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    Tensor value;
    Tensor aux;  // cached factor (Cholesky) where the backward rule needs it
    bool needs_grad = false;  // depends on at least one variable leaf
  };

  Var record(Node node);
  Var wrap(int index) { return Var(this, index); }
  const Node& node(int index) const { return nodes_[static_cast<std::size_t>(index)]; }

 private:
  void accumulate_node(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                       std::vector<bool>& touched) const;

  std::vector<Node> nodes_;
};

// Elementwise binary ops broadcast along any axis of extent one.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// scale · x + shift
Var affine(Var x, double scale, double shift = 0.0);
inline Var scale(Var x, double s) { return affine(x, s, 0.0); }

/// a[m×k] · b[k×n]
Var matmul(Var a, Var b);
/// a[m×k] · b[n×k]ᵀ
Var matmul_nt(Var a, Var b);

Var tanh(Var x);
Var softplus(Var x);
Var exp(Var x);
Var log(Var x);
Var reciprocal(Var x);

/// Sum of all entries → 1×1.
Var sum(Var x);
/// Column sums → 1×cols.
Var sum_rows(Var x);
/// Row sums → rows×1.
Var sum_cols(Var x);
/// Sum of squares → 1×1.
Var norm_sq(Var x);

Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var transpose(Var x);
Var broadcast_to(Var x, std::size_t rows, std::size_t cols);

/// Row-wise matrix-vector product: each row of `mats` holds a row-major n×n
/// matrix, each row of `vecs` an n-vector.
Var batch_matvec(Var mats, Var vecs);
/// Row-wise solve of M x = b via Cholesky; rows of `mats` must be symmetric
/// positive definite. Throws PdFailure.
Var batch_solve(Var mats, Var rhs);
/// Row-wise log-determinant via Cholesky → rows×1. Throws PdFailure.
Var batch_logdet(Var mats);

/// Lower Cholesky factor of one symmetric matrix. Throws PdFailure.
Var cholesky(Var a);
/// log det of one symmetric positive definite matrix. Throws PdFailure.
Var logdet(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var x) { return scale(x, s); }
inline Var operator-(Var x) { return scale(x, -1.0); }

}  // namespace delsmm::ad
