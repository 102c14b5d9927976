// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "alter/errors.hpp"

namespace alter::numkit {

// Dense row-major float64 matrix with reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a graph node. Every operation records its
// parents and a backward function that is itself expressed in Tensor ops, so
// gradients are ordinary graph tensors and can be differentiated again
// (needed for the gradient-norm penalty). Scalars are 1x1 tensors.
//
// Tensors are immutable once recorded in a graph. Leaf data may be mutated
// in place (optimizer steps, finite differences) only between graphs, i.e.
// after every graph referencing the leaf has been discarded.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double value);
  static Tensor from_data(int rows, int cols, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  int rows() const;
  int cols() const;
  size_t size() const;
  bool requires_grad() const;
  uint64_t id() const;

  double at(int r, int c) const;
  double item() const;  // 1x1 only
  std::span<const double> data() const;

  // Leaf mutation. See class comment for the aliasing rule.
  double* mutable_data();
  void set_data(std::span<const double> values);
  void add_scaled(const Tensor& delta, double scale);  // this += scale*delta

  // Freeze or unfreeze a leaf (no recorded parents). Frozen leaves drop out
  // of graph recording entirely, so they can never accumulate gradients.
  void set_requires_grad(bool on);

  // Constant copy that no gradient flows through.
  Tensor detached() const;
  // Deep copy preserving requires_grad, detached from any graph.
  Tensor clone_leaf() const;

  bool same_bits(const Tensor& other) const;

  struct Node;
  Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
  friend Tensor make_op(int, int, std::vector<double>, std::vector<Tensor>,
                        std::function<std::vector<Tensor>(const Tensor&)>,
                        const char*);
};

// Disables graph recording for the duration of the guard: ops executed under
// it produce constant tensors. Used on evaluation paths where gradients are
// never needed; cuts allocation churn.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// --- primitive ops -------------------------------------------------------
// Each op validates shapes, checks every output value is finite
// (NaN/Inf -> NumericError) and has a backward expressed in these same ops.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor smul(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum_all(const Tensor& a);                          // -> 1x1
Tensor broadcast_all(const Tensor& s, int rows, int cols);  // 1x1 -> rows x cols
Tensor rowsum(const Tensor& a);                           // m x n -> m x 1
Tensor broadcast_cols(const Tensor& v, int cols);         // m x 1 -> m x cols
Tensor colsum(const Tensor& a);                           // m x n -> 1 x n
Tensor broadcast_rows(const Tensor& v, int rows);         // 1 x n -> rows x n

Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);                 // a > 0
Tensor pow_const(const Tensor& a, double p);   // a > 0 unless p is a non-negative integer
Tensor tanh_t(const Tensor& a);

Tensor row_select(const Tensor& a, const std::vector<int>& rows);
Tensor row_scatter_add(const Tensor& a, const std::vector<int>& rows, int out_rows);
Tensor slice_cols(const Tensor& a, int col0, int width);
Tensor pad_cols(const Tensor& a, int col0, int total_cols);
Tensor gather_cols(const Tensor& a, const std::vector<int>& idx);   // -> m x 1
Tensor scatter_cols(const Tensor& v, const std::vector<int>& idx, int cols);

// Per-row max as a constant (no gradient); used for stabilized softmax,
// where the shift cancels exactly for all derivative orders.
Tensor rowmax_detached(const Tensor& a);

// Per-row max over columns excluding one index per row. Subgradient goes to
// the lowest-index maximizer.
Tensor rowmax_excluding(const Tensor& a, const std::vector<int>& excluded);

// --- composites ----------------------------------------------------------

// Max-subtracted softmax per row; rows sum to 1 within 1e-12.
Tensor softmax_rows(const Tensor& z);
Tensor log_softmax_rows(const Tensor& z);

// Mean negative log-likelihood (natural log) over positions where
// mask[i] != 0. Empty selection is a contract error.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask);

// --- autodiff ------------------------------------------------------------

using GradMap = std::unordered_map<uint64_t, Tensor>;

// Reverse-mode gradient of a scalar loss with respect to each tensor in
// `wrt`. Tensors unreachable from the loss get an exact-zero gradient.
// Returned gradients are graph tensors, so they can be differentiated again.
GradMap grad(const Tensor& loss, std::span<const Tensor> wrt);

// Convenience lookup; exact zeros when absent.
Tensor grad_of(const GradMap& m, const Tensor& t);

// Squared Frobenius norm of d(scalar_fn)/dA, and its gradient with respect
// to A, computed by differentiating through the first backward pass.
std::pair<double, Tensor> grad_norm_grad(
    const std::function<Tensor(const Tensor&)>& scalar_fn, const Tensor& a);

// Central-difference check of analytic gradients: returns the maximum
// relative error |analytic - central| / (|analytic| + 1e-12) over every
// element of every parameter. h must lie in [1e-7, 1e-3].
double finite_diff_check(
    const std::function<Tensor(std::span<const Tensor>)>& loss_fn,
    std::span<Tensor> params, double h);

}  // namespace alter::numkit
