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

#include "delsmm/diffcore/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "delsmm/diffcore/kernels.hpp"
#include "delsmm/errors.hpp"

namespace delsmm::ad {
namespace {

using Node = Tape::Node;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const simd::KernelTable& kernels() { return simd::active_kernels(); }

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractViolation("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractViolation("operands recorded on different tapes");
  return t;
}

std::pair<std::size_t, std::size_t> broadcast_shape(const Tensor& a, const Tensor& b,
                                                    const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ContractViolation(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                            shape_string(b));
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

template <class F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* name, F f) {
  const auto [rows, cols] = broadcast_shape(a, b, name);
  Tensor out(rows, cols);
  if (a.same_shape(b)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ra = a.rows() == 1 ? 0 : r;
    const std::size_t rb = b.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t ca = a.cols() == 1 ? 0 : c;
      const std::size_t cb = b.cols() == 1 ? 0 : c;
      out(r, c) = f(a(ra, ca), b(rb, cb));
    }
  }
  return out;
}

// Sum `g` down to rows×cols (inverse of broadcasting).
Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t ro = rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < g.cols(); ++c) out(ro, cols == 1 ? 0 : c) += g(r, c);
  }
  return out;
}

Tensor expand(const Tensor& x, std::size_t rows, std::size_t cols) {
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t rx = x.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = x(rx, x.cols() == 1 ? 0 : c);
  }
  return out;
}

Tensor gemm_nn(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  kernels().gemm_nn(a.data(), b.data(), c.data(), a.rows(), b.cols(), a.cols());
  return c;
}

Tensor gemm_nt(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.rows());
  kernels().gemm_nt(a.data(), b.data(), c.data(), a.rows(), b.rows(), a.cols());
  return c;
}

Tensor gemm_tn(const Tensor& a, const Tensor& b) {
  Tensor c(a.cols(), b.cols());
  kernels().gemm_tn(a.data(), b.data(), c.data(), a.cols(), b.cols(), a.rows());
  return c;
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t square_dim(std::size_t entries, const char* op) {
  const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(entries))));
  if (n * n != entries) {
    throw ContractViolation(std::string(op) + ": row length " + std::to_string(entries) +
                            " is not a square");
  }
  return n;
}

// Lower factor of sym(a) into l. Returns n on success, otherwise the index
// of the first non-positive pivot.
std::size_t cholesky_raw(const double* a, double* l, std::size_t n) {
  for (std::size_t i = 0; i < n * n; ++i) l[i] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.5 * (a[i * n + j] + a[j * n + i]);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (!(s > 0.0)) return i;
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  return n;
}

// Solve (L Lᵀ) x = b.
void cholesky_solve_raw(const double* l, const double* b, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * x[k];
    x[i] = s / l[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * x[k];
    x[ii] = s / l[ii * n + ii];
  }
}

// Inverse of L Lᵀ, row-major into out.
void cholesky_inverse_raw(const double* l, double* out, std::size_t n) {
  std::vector<double> e(n, 0.0);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    cholesky_solve_raw(l, e.data(), col.data(), n);
    for (std::size_t i = 0; i < n; ++i) out[i * n + j] = col[i];
  }
}

Var make(Tape& t, OpKind op, Tensor value, int a = -1, int b = -1) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.value = std::move(value);
  return t.record(std::move(n));
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kVariable: return "variable";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAffine: return "affine";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kMatMulNT: return "matmul_nt";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kReciprocal: return "reciprocal";
    case OpKind::kSum: return "sum";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kSumCols: return "sum_cols";
    case OpKind::kNormSq: return "norm_sq";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kBroadcast: return "broadcast_to";
    case OpKind::kBatchMatVec: return "batch_matvec";
    case OpKind::kBatchSolve: return "batch_solve";
    case OpKind::kBatchLogdet: return "batch_logdet";
    case OpKind::kCholesky: return "cholesky";
    case OpKind::kLogdet: return "logdet";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!valid()) throw ContractViolation("value() of an unbound Var");
  return tape_->value(index_);
}

Tensor Gradients::operator[](Var v) const {
  if (v.tape() != tape_) throw ContractViolation("Gradients queried with a Var from another tape");
  const auto i = static_cast<std::size_t>(v.index());
  if (i < touched_.size() && touched_[i]) return adjoints_[i];
  return Tensor(v.rows(), v.cols());
}

bool Gradients::has(Var v) const {
  const auto i = static_cast<std::size_t>(v.index());
  return v.tape() == tape_ && i < touched_.size() && touched_[i];
}

Var Tape::variable(Tensor value) {
  Node n;
  n.op = OpKind::kVariable;
  n.value = std::move(value);
  return record(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = OpKind::kConstant;
  n.value = std::move(value);
  return record(std::move(n));
}

Var Tape::record(Node node) {
  if (!node.value.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op_name(node.op));
  }
  auto depends = [&](int idx) {
    return idx >= 0 && nodes_[static_cast<std::size_t>(idx)].needs_grad;
  };
  node.needs_grad = node.op == OpKind::kVariable || depends(node.a) || depends(node.b) ||
                    std::any_of(node.inputs.begin(), node.inputs.end(), depends);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

// ---------------------------------------------------------------------------
// Primitive constructors

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return make(t, OpKind::kAdd,
              broadcast_binary(a.value(), b.value(), "add", [](double x, double y) { return x + y; }),
              a.index(), b.index());
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return make(t, OpKind::kSub,
              broadcast_binary(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }),
              a.index(), b.index());
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.same_shape(bv)) {
    Tensor out(av.rows(), av.cols());
    kernels().hadamard(av.data(), bv.data(), out.data(), av.size());
    return make(t, OpKind::kMul, std::move(out), a.index(), b.index());
  }
  return make(t, OpKind::kMul,
              broadcast_binary(av, bv, "mul", [](double x, double y) { return x * y; }), a.index(),
              b.index());
}

Var affine(Var x, double scale, double shift) {
  Tape& t = tape_of(x);
  Node n;
  n.op = OpKind::kAffine;
  n.a = x.index();
  n.s0 = scale;
  n.s1 = shift;
  n.value = map(x.value(), [&](double v) { return scale * v + shift; });
  return t.record(std::move(n));
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw ContractViolation("matmul: inner dimensions differ (" + shape_string(a.value()) + " · " +
                            shape_string(b.value()) + ")");
  }
  return make(t, OpKind::kMatMul, gemm_nn(a.value(), b.value()), a.index(), b.index());
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.cols()) {
    throw ContractViolation("matmul_nt: inner dimensions differ (" + shape_string(a.value()) +
                            " · " + shape_string(b.value()) + "ᵀ)");
  }
  return make(t, OpKind::kMatMulNT, gemm_nt(a.value(), b.value()), a.index(), b.index());
}

Var tanh(Var x) {
  return make(tape_of(x), OpKind::kTanh, map(x.value(), [](double v) { return std::tanh(v); }),
              x.index());
}

Var softplus(Var x) {
  return make(tape_of(x), OpKind::kSoftplus, map(x.value(), softplus_scalar), x.index());
}

Var exp(Var x) {
  return make(tape_of(x), OpKind::kExp, map(x.value(), [](double v) { return std::exp(v); }),
              x.index());
}

Var log(Var x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value");
  }
  return make(tape_of(x), OpKind::kLog, map(x.value(), [](double v) { return std::log(v); }),
              x.index());
}

Var reciprocal(Var x) {
  return make(tape_of(x), OpKind::kReciprocal,
              map(x.value(), [](double v) { return 1.0 / v; }), x.index());
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make(tape_of(x), OpKind::kSum, Tensor::scalar(s), x.index());
}

Var sum_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  }
  return make(tape_of(x), OpKind::kSumRows, std::move(out), x.index());
}

Var sum_cols(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) s += xv(r, c);
    out[r] = s;
  }
  return make(tape_of(x), OpKind::kSumCols, std::move(out), x.index());
}

Var norm_sq(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v * v;
  return make(tape_of(x), OpKind::kNormSq, Tensor::scalar(s), x.index());
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.cols()) throw ContractViolation("slice_cols: range out of bounds");
  Tensor out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, begin + c);
  }
  Node n;
  n.op = OpKind::kSliceCols;
  n.a = x.index();
  n.i0 = begin;
  n.i1 = count;
  n.value = std::move(out);
  return tape_of(x).record(std::move(n));
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.rows()) throw ContractViolation("slice_rows: range out of bounds");
  std::vector<double> data(xv.data() + begin * xv.cols(), xv.data() + (begin + count) * xv.cols());
  Node n;
  n.op = OpKind::kSliceRows;
  n.a = x.index();
  n.i0 = begin;
  n.i1 = count;
  n.value = Tensor(count, xv.cols(), std::move(data));
  return tape_of(x).record(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (p.tape() != &t) throw ContractViolation("concat_cols: operands on different tapes");
    if (p.rows() != rows) throw ContractViolation("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  Node n;
  n.op = OpKind::kConcatCols;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, offset + c) = pv(r, c);
    }
    offset += pv.cols();
    n.inputs.push_back(p.index());
  }
  n.value = std::move(out);
  return t.record(std::move(n));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (p.tape() != &t) throw ContractViolation("concat_rows: operands on different tapes");
    if (p.cols() != cols) throw ContractViolation("concat_rows: column counts differ");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  Node n;
  n.op = OpKind::kConcatRows;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    data.insert(data.end(), pv.storage().begin(), pv.storage().end());
    n.inputs.push_back(p.index());
  }
  n.value = Tensor(rows, cols, std::move(data));
  return t.record(std::move(n));
}

Var transpose(Var x) {
  return make(tape_of(x), OpKind::kTranspose, x.value().transposed(), x.index());
}

Var broadcast_to(Var x, std::size_t rows, std::size_t cols) {
  const Tensor& xv = x.value();
  if ((xv.rows() != rows && xv.rows() != 1) || (xv.cols() != cols && xv.cols() != 1)) {
    throw ContractViolation("broadcast_to: cannot broadcast " + shape_string(xv));
  }
  Node n;
  n.op = OpKind::kBroadcast;
  n.a = x.index();
  n.i0 = rows;
  n.i1 = cols;
  n.value = expand(xv, rows, cols);
  return tape_of(x).record(std::move(n));
}

Var batch_matvec(Var mats, Var vecs) {
  Tape& t = tape_of(mats, vecs);
  const Tensor& m = mats.value();
  const Tensor& v = vecs.value();
  const std::size_t n = v.cols();
  if (m.rows() != v.rows() || m.cols() != n * n) {
    throw ContractViolation("batch_matvec: shapes " + shape_string(m) + " and " + shape_string(v));
  }
  Tensor out(v.rows(), n);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const double* mr = m.data() + r * n * n;
    const double* vr = v.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += mr[i * n + k] * vr[k];
      out(r, i) = s;
    }
  }
  return make(t, OpKind::kBatchMatVec, std::move(out), mats.index(), vecs.index());
}

Var batch_solve(Var mats, Var rhs) {
  Tape& t = tape_of(mats, rhs);
  const Tensor& m = mats.value();
  const Tensor& b = rhs.value();
  const std::size_t n = b.cols();
  if (m.rows() != b.rows() || m.cols() != n * n) {
    throw ContractViolation("batch_solve: shapes " + shape_string(m) + " and " + shape_string(b));
  }
  Tensor factors(m.rows(), n * n);
  Tensor out(b.rows(), n);
  for (std::size_t r = 0; r < b.rows(); ++r) {
    double* l = factors.data() + r * n * n;
    const std::size_t fail = cholesky_raw(m.data() + r * n * n, l, n);
    if (fail != n) throw PdFailure(fail, r, "batch_solve");
    cholesky_solve_raw(l, b.data() + r * n, out.data() + r * n, n);
  }
  Node node;
  node.op = OpKind::kBatchSolve;
  node.a = mats.index();
  node.b = rhs.index();
  node.value = std::move(out);
  node.aux = std::move(factors);
  return t.record(std::move(node));
}

Var batch_logdet(Var mats) {
  const Tensor& m = mats.value();
  const std::size_t n = square_dim(m.cols(), "batch_logdet");
  Tensor factors(m.rows(), n * n);
  Tensor out(m.rows(), 1);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double* l = factors.data() + r * n * n;
    const std::size_t fail = cholesky_raw(m.data() + r * n * n, l, n);
    if (fail != n) throw PdFailure(fail, r, "batch_logdet");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::log(l[i * n + i]);
    out[r] = 2.0 * s;
  }
  Node node;
  node.op = OpKind::kBatchLogdet;
  node.a = mats.index();
  node.value = std::move(out);
  node.aux = std::move(factors);
  return tape_of(mats).record(std::move(node));
}

Var cholesky(Var a) {
  const Tensor& av = a.value();
  if (av.rows() != av.cols()) throw ContractViolation("cholesky: matrix not square");
  const std::size_t n = av.rows();
  Tensor l(n, n);
  const std::size_t fail = cholesky_raw(av.data(), l.data(), n);
  if (fail != n) throw PdFailure(fail, 0, "cholesky");
  return make(tape_of(a), OpKind::kCholesky, std::move(l), a.index());
}

Var logdet(Var a) {
  const Tensor& av = a.value();
  if (av.rows() != av.cols()) throw ContractViolation("logdet: matrix not square");
  const std::size_t n = av.rows();
  Tensor l(n, n);
  const std::size_t fail = cholesky_raw(av.data(), l.data(), n);
  if (fail != n) throw PdFailure(fail, 0, "logdet");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::log(l(i, i));
  Node node;
  node.op = OpKind::kLogdet;
  node.a = a.index();
  node.value = Tensor::scalar(2.0 * s);
  node.aux = std::move(l);
  return tape_of(a).record(std::move(node));
}

// ---------------------------------------------------------------------------
// Reverse sweep

Gradients Tape::backward(Var output) const {
  if (output.tape() != this) throw ContractViolation("backward: Var from another tape");
  if (output.value().size() != 1) {
    throw ContractViolation("backward: output must be scalar, got " +
                            shape_string(output.value()));
  }
  Gradients g;
  g.tape_ = this;
  const auto end = static_cast<std::size_t>(output.index()) + 1;
  g.adjoints_.resize(end);
  g.touched_.assign(end, false);
  g.adjoints_[end - 1] = Tensor(output.rows(), output.cols(), 1.0);
  g.touched_[end - 1] = true;
  for (std::size_t i = end; i-- > 0;) {
    if (!g.touched_[i]) continue;
    accumulate_node(nodes_[i], g.adjoints_[i], g.adjoints_, g.touched_);
  }
  return g;
}

void Tape::accumulate_node(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                           std::vector<bool>& touched) const {
  auto push = [&](int idx, Tensor contrib) {
    if (idx < 0) return;
    const auto i = static_cast<std::size_t>(idx);
    if (!nodes_[i].needs_grad) return;
    if (!touched[i]) {
      adj[i] = std::move(contrib);
      touched[i] = true;
    } else {
      kernels().axpy(1.0, contrib.data(), adj[i].data(), contrib.size());
    }
  };
  auto val = [&](int idx) -> const Tensor& { return nodes_[static_cast<std::size_t>(idx)].value; };
  auto live = [&](int idx) { return idx >= 0 && nodes_[static_cast<std::size_t>(idx)].needs_grad; };

  switch (n.op) {
    case OpKind::kVariable:
    case OpKind::kConstant:
      return;
    case OpKind::kAdd:
    case OpKind::kSub: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      if (live(n.a)) push(n.a, reduce_to(g, a.rows(), a.cols()));
      if (live(n.b)) {
        Tensor gb = reduce_to(g, b.rows(), b.cols());
        if (n.op == OpKind::kSub) {
          for (double& v : gb.values()) v = -v;
        }
        push(n.b, std::move(gb));
      }
      return;
    }
    case OpKind::kMul: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      if (live(n.a)) {
        Tensor t = a.same_shape(b) && g.same_shape(b)
                       ? [&] {
                           Tensor o(b.rows(), b.cols());
                           kernels().hadamard(g.data(), b.data(), o.data(), o.size());
                           return o;
                         }()
                       : broadcast_binary(g, b, "mul", [](double x, double y) { return x * y; });
        push(n.a, reduce_to(t, a.rows(), a.cols()));
      }
      if (live(n.b)) {
        Tensor t = a.same_shape(b) && g.same_shape(a)
                       ? [&] {
                           Tensor o(a.rows(), a.cols());
                           kernels().hadamard(g.data(), a.data(), o.data(), o.size());
                           return o;
                         }()
                       : broadcast_binary(g, a, "mul", [](double x, double y) { return x * y; });
        push(n.b, reduce_to(t, b.rows(), b.cols()));
      }
      return;
    }
    case OpKind::kAffine:
      push(n.a, map(g, [&](double v) { return n.s0 * v; }));
      return;
    case OpKind::kMatMul:
      // C = A B: dA = G Bᵀ, dB = Aᵀ G
      if (live(n.a)) push(n.a, gemm_nt(g, val(n.b)));
      if (live(n.b)) push(n.b, gemm_tn(val(n.a), g));
      return;
    case OpKind::kMatMulNT:
      // C = A Bᵀ: dA = G B, dB = Gᵀ A
      if (live(n.a)) push(n.a, gemm_nn(g, val(n.b)));
      if (live(n.b)) push(n.b, gemm_tn(g, val(n.a)));
      return;
    case OpKind::kTanh: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = g[i] * (1.0 - n.value[i] * n.value[i]);
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kSoftplus: {
      const Tensor& x = val(n.a);
      Tensor t(g.rows(), g.cols());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = g[i] * sigmoid_scalar(x[i]);
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kExp: {
      Tensor t(g.rows(), g.cols());
      kernels().hadamard(g.data(), n.value.data(), t.data(), t.size());
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kLog: {
      const Tensor& x = val(n.a);
      Tensor t(g.rows(), g.cols());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = g[i] / x[i];
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kReciprocal: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = -g[i] * n.value[i] * n.value[i];
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kSum: {
      const Tensor& x = val(n.a);
      push(n.a, Tensor(x.rows(), x.cols(), g.item()));
      return;
    }
    case OpKind::kSumRows:
    case OpKind::kSumCols: {
      const Tensor& x = val(n.a);
      push(n.a, expand(g, x.rows(), x.cols()));
      return;
    }
    case OpKind::kNormSq: {
      const Tensor& x = val(n.a);
      const double s = 2.0 * g.item();
      push(n.a, map(x, [&](double v) { return s * v; }));
      return;
    }
    case OpKind::kSliceCols: {
      const Tensor& x = val(n.a);
      Tensor t(x.rows(), x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < n.i1; ++c) t(r, n.i0 + c) = g(r, c);
      }
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kSliceRows: {
      const Tensor& x = val(n.a);
      Tensor t(x.rows(), x.cols());
      std::copy(g.storage().begin(), g.storage().end(), t.data() + n.i0 * x.cols());
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kConcatCols: {
      std::size_t offset = 0;
      for (int idx : n.inputs) {
        const Tensor& p = val(idx);
        if (live(idx)) {
          Tensor t(p.rows(), p.cols());
          for (std::size_t r = 0; r < p.rows(); ++r) {
            for (std::size_t c = 0; c < p.cols(); ++c) t(r, c) = g(r, offset + c);
          }
          push(idx, std::move(t));
        }
        offset += p.cols();
      }
      return;
    }
    case OpKind::kConcatRows: {
      std::size_t offset = 0;
      for (int idx : n.inputs) {
        const Tensor& p = val(idx);
        if (live(idx)) {
          std::vector<double> data(g.data() + offset, g.data() + offset + p.size());
          push(idx, Tensor(p.rows(), p.cols(), std::move(data)));
        }
        offset += p.size();
      }
      return;
    }
    case OpKind::kTranspose:
      push(n.a, g.transposed());
      return;
    case OpKind::kBroadcast: {
      const Tensor& x = val(n.a);
      push(n.a, reduce_to(g, x.rows(), x.cols()));
      return;
    }
    case OpKind::kBatchMatVec: {
      const Tensor& m = val(n.a);
      const Tensor& v = val(n.b);
      const std::size_t dim = v.cols();
      if (live(n.a)) {
        Tensor t(m.rows(), m.cols());
        for (std::size_t r = 0; r < v.rows(); ++r) {
          for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t k = 0; k < dim; ++k) t(r, i * dim + k) = g(r, i) * v(r, k);
          }
        }
        push(n.a, std::move(t));
      }
      if (live(n.b)) {
        Tensor t(v.rows(), dim);
        for (std::size_t r = 0; r < v.rows(); ++r) {
          for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t k = 0; k < dim; ++k) t(r, k) += m(r, i * dim + k) * g(r, i);
          }
        }
        push(n.b, std::move(t));
      }
      return;
    }
    case OpKind::kBatchSolve: {
      // x = M⁻¹ b with M read through sym(M): b̄ = M⁻¹ ḡ, M̄ = -sym(b̄ xᵀ).
      const Tensor& x = n.value;
      const std::size_t dim = x.cols();
      Tensor gb(x.rows(), dim);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        cholesky_solve_raw(n.aux.data() + r * dim * dim, g.data() + r * dim, gb.data() + r * dim,
                           dim);
      }
      if (live(n.a)) {
        Tensor t(x.rows(), dim * dim);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t k = 0; k < dim; ++k) {
              t(r, i * dim + k) = -0.5 * (gb(r, i) * x(r, k) + x(r, i) * gb(r, k));
            }
          }
        }
        push(n.a, std::move(t));
      }
      if (live(n.b)) push(n.b, std::move(gb));
      return;
    }
    case OpKind::kBatchLogdet: {
      const std::size_t rows = n.value.rows();
      const std::size_t dim = square_dim(n.aux.cols(), "batch_logdet");
      Tensor t(rows, dim * dim);
      for (std::size_t r = 0; r < rows; ++r) {
        cholesky_inverse_raw(n.aux.data() + r * dim * dim, t.data() + r * dim * dim, dim);
        for (std::size_t i = 0; i < dim * dim; ++i) t(r, i) *= g[r];
      }
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kLogdet: {
      const std::size_t dim = n.aux.rows();
      Tensor t(dim, dim);
      cholesky_inverse_raw(n.aux.data(), t.data(), dim);
      const double s = g.item();
      for (double& v : t.values()) v *= s;
      push(n.a, std::move(t));
      return;
    }
    case OpKind::kCholesky: {
      // Ā = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹), Φ = lower triangle with halved diagonal.
      const std::size_t dim = n.value.rows();
      Eigen::Map<const RowMatrix> l(n.value.data(), static_cast<Eigen::Index>(dim),
                                    static_cast<Eigen::Index>(dim));
      Eigen::Map<const RowMatrix> gl(g.data(), static_cast<Eigen::Index>(dim),
                                     static_cast<Eigen::Index>(dim));
      RowMatrix lbar = gl.triangularView<Eigen::Lower>();
      RowMatrix p = l.transpose() * lbar;
      p = RowMatrix(p.triangularView<Eigen::Lower>());
      p.diagonal() *= 0.5;
      const auto lt = l.triangularView<Eigen::Lower>();
      // S = L⁻ᵀ P L⁻¹
      RowMatrix s = lt.transpose().solve(p);
      s = lt.transpose().solve(s.transpose()).transpose();
      const RowMatrix abar = 0.5 * (s + s.transpose());
      Tensor t(dim, dim);
      Eigen::Map<RowMatrix>(t.data(), static_cast<Eigen::Index>(dim),
                            static_cast<Eigen::Index>(dim)) = abar;
      push(n.a, std::move(t));
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Forward-mode sweep recorded on the tape

namespace {

Var fit(Var t, std::size_t rows, std::size_t cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  return broadcast_to(t, rows, cols);
}

}  // namespace

Var Tape::jvp(Var output, std::span<const Seed> seeds) {
  if (output.tape() != this) throw ContractViolation("jvp: output from another tape");
  const auto end = static_cast<std::size_t>(output.index());
  std::vector<int> tangent(end + 1, -1);
  std::size_t start = end + 1;
  for (const Seed& s : seeds) {
    if (s.input.tape() != this || s.direction.tape() != this) {
      throw ContractViolation("jvp: seed from another tape");
    }
    if (!s.input.value().same_shape(s.direction.value())) {
      throw ContractViolation("jvp: seed direction shape " + shape_string(s.direction.value()) +
                              " does not match input " + shape_string(s.input.value()));
    }
    const auto i = static_cast<std::size_t>(s.input.index());
    if (i > end) continue;
    tangent[i] = s.direction.index();
    start = std::min(start, i);
  }

  for (std::size_t i = start; i <= end; ++i) {
    // Copy what we need: recording new nodes may reallocate nodes_.
    const OpKind op = nodes_[i].op;
    if (op == OpKind::kVariable || op == OpKind::kConstant) continue;
    const int a = nodes_[i].a;
    const int b = nodes_[i].b;
    const std::vector<int> inputs = nodes_[i].inputs;
    const double s0 = nodes_[i].s0;
    const std::size_t i0 = nodes_[i].i0;
    const std::size_t i1 = nodes_[i].i1;
    const std::size_t rows = nodes_[i].value.rows();
    const std::size_t cols = nodes_[i].value.cols();

    auto tan = [&](int idx) { return idx >= 0 ? tangent[static_cast<std::size_t>(idx)] : -1; };
    bool any = tan(a) >= 0 || tan(b) >= 0;
    for (int idx : inputs) any = any || tan(idx) >= 0;
    if (!any) continue;

    const Var self = wrap(static_cast<int>(i));
    const Var va = a >= 0 ? wrap(a) : Var();
    const Var vb = b >= 0 ? wrap(b) : Var();
    const Var ta = tan(a) >= 0 ? wrap(tan(a)) : Var();
    const Var tb = tan(b) >= 0 ? wrap(tan(b)) : Var();
    Var out;

    switch (op) {
      case OpKind::kAdd:
      case OpKind::kSub: {
        const double sign = op == OpKind::kSub ? -1.0 : 1.0;
        if (ta.valid() && tb.valid()) {
          out = op == OpKind::kSub ? sub(ta, tb) : add(ta, tb);
          out = fit(out, rows, cols);
        } else if (ta.valid()) {
          out = fit(ta, rows, cols);
        } else {
          out = fit(sign < 0 ? scale(tb, -1.0) : tb, rows, cols);
        }
        break;
      }
      case OpKind::kMul: {
        Var l = ta.valid() ? mul(ta, vb) : Var();
        Var r = tb.valid() ? mul(va, tb) : Var();
        out = l.valid() && r.valid() ? add(l, r) : (l.valid() ? l : r);
        out = fit(out, rows, cols);
        break;
      }
      case OpKind::kAffine:
        out = scale(ta, s0);
        break;
      case OpKind::kMatMul: {
        Var l = ta.valid() ? matmul(ta, vb) : Var();
        Var r = tb.valid() ? matmul(va, tb) : Var();
        out = l.valid() && r.valid() ? add(l, r) : (l.valid() ? l : r);
        break;
      }
      case OpKind::kMatMulNT: {
        Var l = ta.valid() ? matmul_nt(ta, vb) : Var();
        Var r = tb.valid() ? matmul_nt(va, tb) : Var();
        out = l.valid() && r.valid() ? add(l, r) : (l.valid() ? l : r);
        break;
      }
      case OpKind::kTanh:
        out = mul(affine(mul(self, self), -1.0, 1.0), ta);
        break;
      case OpKind::kSoftplus:
        // softplus'(x) = sigmoid(x) = exp(x - softplus(x))
        out = mul(exp(sub(va, self)), ta);
        break;
      case OpKind::kExp:
        out = mul(self, ta);
        break;
      case OpKind::kLog:
        out = mul(ta, reciprocal(va));
        break;
      case OpKind::kReciprocal:
        out = mul(scale(mul(self, self), -1.0), ta);
        break;
      case OpKind::kSum:
        out = sum(ta);
        break;
      case OpKind::kSumRows:
        out = sum_rows(ta);
        break;
      case OpKind::kSumCols:
        out = sum_cols(ta);
        break;
      case OpKind::kNormSq:
        out = scale(sum(mul(va, ta)), 2.0);
        break;
      case OpKind::kSliceCols:
        out = slice_cols(ta, i0, i1);
        break;
      case OpKind::kSliceRows:
        out = slice_rows(ta, i0, i1);
        break;
      case OpKind::kConcatCols:
      case OpKind::kConcatRows: {
        std::vector<Var> parts;
        parts.reserve(inputs.size());
        for (int idx : inputs) {
          if (tan(idx) >= 0) {
            parts.push_back(wrap(tan(idx)));
          } else {
            const Tensor& pv = value(idx);
            parts.push_back(constant(Tensor(pv.rows(), pv.cols())));
          }
        }
        out = op == OpKind::kConcatCols ? concat_cols(parts) : concat_rows(parts);
        break;
      }
      case OpKind::kTranspose:
        out = transpose(ta);
        break;
      case OpKind::kBroadcast:
        out = broadcast_to(ta, i0, i1);
        break;
      case OpKind::kBatchMatVec: {
        Var l = ta.valid() ? batch_matvec(ta, vb) : Var();
        Var r = tb.valid() ? batch_matvec(va, tb) : Var();
        out = l.valid() && r.valid() ? add(l, r) : (l.valid() ? l : r);
        break;
      }
      case OpKind::kBatchSolve: {
        // dx = M⁻¹ (db - dM x)
        Var rhs;
        if (ta.valid()) {
          Var dmx = batch_matvec(ta, self);
          rhs = tb.valid() ? sub(tb, dmx) : scale(dmx, -1.0);
        } else {
          rhs = tb;
        }
        out = batch_solve(va, rhs);
        break;
      }
      case OpKind::kBatchLogdet:
      case OpKind::kCholesky:
      case OpKind::kLogdet:
      case OpKind::kVariable:
      case OpKind::kConstant:
        throw NonDifferentiablePrimitive(std::string("jvp: no tangent rule for primitive '") +
                                         op_name(op) + "'");
    }
    tangent[i] = out.index();
  }

  if (tangent[end] < 0) return constant(Tensor(output.rows(), output.cols()));
  return wrap(tangent[end]);
}

}  // namespace delsmm::ad
