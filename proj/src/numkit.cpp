// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/numkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <unordered_set>

namespace alter::numkit {

namespace {

std::atomic<uint64_t> g_next_id{1};
thread_local int g_no_grad_depth = 0;

std::string shape_str(int r, int c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

struct Tensor::Node {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<Tensor> parents;
  std::function<std::vector<Tensor>(const Tensor&)> backward;
};

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

// Central factory: validates finiteness and decides whether the op is
// recorded (any differentiable parent, and not inside a NoGradGuard).
Tensor make_op(int rows, int cols, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<std::vector<Tensor>(const Tensor&)> backward,
               const char* op_name) {
  if (rows <= 0 || cols <= 0 ||
      data.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols)) {
    throw ShapeError(std::string(op_name) + ": bad output shape " +
                     shape_str(rows, cols));
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op_name) + ": non-finite value in output");
    }
  }
  auto node = std::make_shared<Tensor::Node>();
  node->rows = rows;
  node->cols = cols;
  node->data = std::move(data);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool track = false;
  if (g_no_grad_depth == 0) {
    for (const Tensor& p : parents) {
      if (p.defined() && p.requires_grad()) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// --- Tensor basics --------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  Tensor t = make_op(rows, cols,
                     std::vector<double>(static_cast<size_t>(rows) * cols, 0.0),
                     {}, nullptr, "zeros");
  t.node_->requires_grad = requires_grad && g_no_grad_depth == 0;
  return t;
}

Tensor Tensor::full(int rows, int cols, double value) {
  return make_op(rows, cols,
                 std::vector<double>(static_cast<size_t>(rows) * cols, value),
                 {}, nullptr, "full");
}

Tensor Tensor::from_data(int rows, int cols, std::vector<double> data,
                         bool requires_grad) {
  Tensor t = make_op(rows, cols, std::move(data), {}, nullptr, "from_data");
  t.node_->requires_grad = requires_grad && g_no_grad_depth == 0;
  return t;
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

int Tensor::rows() const { return node_ ? node_->rows : 0; }
int Tensor::cols() const { return node_ ? node_->cols : 0; }
size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

double Tensor::at(int r, int c) const {
  if (!node_ || r < 0 || r >= node_->rows || c < 0 || c >= node_->cols) {
    throw ShapeError("Tensor::at: index out of range");
  }
  return node_->data[static_cast<size_t>(r) * node_->cols + c];
}

double Tensor::item() const {
  if (!node_ || node_->rows != 1 || node_->cols != 1) {
    throw ShapeError("Tensor::item: tensor is not 1x1");
  }
  return node_->data[0];
}

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return {node_->data.data(), node_->data.size()};
}

double* Tensor::mutable_data() {
  if (!node_) throw ContractError("mutable_data on empty tensor");
  return node_->data.data();
}

void Tensor::set_data(std::span<const double> values) {
  if (!node_ || values.size() != node_->data.size()) {
    throw ShapeError("set_data: size mismatch");
  }
  std::copy(values.begin(), values.end(), node_->data.begin());
}

void Tensor::add_scaled(const Tensor& delta, double scale) {
  if (!node_ || !delta.node_ || delta.size() != size()) {
    throw ShapeError("add_scaled: size mismatch");
  }
  for (size_t i = 0; i < node_->data.size(); ++i) {
    node_->data[i] += scale * delta.node_->data[i];
    if (!std::isfinite(node_->data[i])) {
      throw NumericError("add_scaled: non-finite value");
    }
  }
}

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ContractError("set_requires_grad on empty tensor");
  if (!node_->parents.empty()) {
    throw ContractError("set_requires_grad: only leaves can be toggled");
  }
  node_->requires_grad = on;
}

Tensor Tensor::detached() const {
  if (!node_) return {};
  return make_op(node_->rows, node_->cols, node_->data, {}, nullptr, "detach");
}

Tensor Tensor::clone_leaf() const {
  if (!node_) return {};
  Tensor t =
      make_op(node_->rows, node_->cols, node_->data, {}, nullptr, "clone");
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

bool Tensor::same_bits(const Tensor& other) const {
  if (!node_ || !other.node_) return node_ == other.node_;
  if (node_->rows != other.node_->rows || node_->cols != other.node_->cols) {
    return false;
  }
  return std::memcmp(node_->data.data(), other.node_->data.data(),
                     node_->data.size() * sizeof(double)) == 0;
}

// --- shape helpers --------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
}

void require_defined(const Tensor& a, const char* op) {
  if (!a.defined()) throw ContractError(std::string(op) + ": empty tensor");
}

}  // namespace

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b},
                 [](const Tensor& g) { return std::vector<Tensor>{g, g}; },
                 "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b},
                 [](const Tensor& g) {
                   return std::vector<Tensor>{g, smul(g, -1.0)};
                 },
                 "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b},
                 [a, b](const Tensor& g) {
                   return std::vector<Tensor>{mul(g, b), mul(g, a)};
                 },
                 "mul");
}

Tensor smul(const Tensor& a, double c) {
  require_defined(a, "smul");
  std::vector<double> out(a.size());
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * c;
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [c](const Tensor& g) {
                   return std::vector<Tensor>{smul(g, c)};
                 },
                 "smul");
}

Tensor add_const(const Tensor& a, double c) {
  require_defined(a, "add_const");
  std::vector<double> out(a.size());
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + c;
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [](const Tensor& g) { return std::vector<Tensor>{g}; },
                 "add_const");
}

// --- matmul / transpose ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " +
                     shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int i = 0; i < m; ++i) {
    const double* Ai = A + static_cast<size_t>(i) * k;
    double* Ci = out.data() + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = Ai[kk];
      const double* Bk = B + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) Ci[j] += av * Bk[j];
    }
  }
  return make_op(m, n, std::move(out), {a, b},
                 [a, b](const Tensor& g) {
                   return std::vector<Tensor>{matmul(g, transpose(b)),
                                              matmul(transpose(a), g)};
                 },
                 "matmul");
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<size_t>(j) * m + i] = da[static_cast<size_t>(i) * n + j];
    }
  }
  return make_op(n, m, std::move(out), {a},
                 [](const Tensor& g) {
                   return std::vector<Tensor>{transpose(g)};
                 },
                 "transpose");
}

// --- reductions / broadcasts ----------------------------------------------

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const int m = a.rows(), n = a.cols();
  return make_op(1, 1, {s}, {a},
                 [m, n](const Tensor& g) {
                   return std::vector<Tensor>{broadcast_all(g, m, n)};
                 },
                 "sum_all");
}

Tensor broadcast_all(const Tensor& s, int rows, int cols) {
  require_defined(s, "broadcast_all");
  if (s.rows() != 1 || s.cols() != 1) {
    throw ShapeError("broadcast_all: source must be 1x1");
  }
  std::vector<double> out(static_cast<size_t>(rows) * cols, s.data()[0]);
  return make_op(rows, cols, std::move(out), {s},
                 [](const Tensor& g) {
                   return std::vector<Tensor>{sum_all(g)};
                 },
                 "broadcast_all");
}

Tensor rowsum(const Tensor& a) {
  require_defined(a, "rowsum");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = da.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) s += row[j];
    out[i] = s;
  }
  return make_op(m, 1, std::move(out), {a},
                 [n](const Tensor& g) {
                   return std::vector<Tensor>{broadcast_cols(g, n)};
                 },
                 "rowsum");
}

Tensor broadcast_cols(const Tensor& v, int cols) {
  require_defined(v, "broadcast_cols");
  if (v.cols() != 1) throw ShapeError("broadcast_cols: source must be m x 1");
  const int m = v.rows();
  std::vector<double> out(static_cast<size_t>(m) * cols);
  auto dv = v.data();
  for (int i = 0; i < m; ++i) {
    std::fill_n(out.begin() + static_cast<size_t>(i) * cols, cols, dv[i]);
  }
  return make_op(m, cols, std::move(out), {v},
                 [](const Tensor& g) {
                   return std::vector<Tensor>{rowsum(g)};
                 },
                 "broadcast_cols");
}

Tensor colsum(const Tensor& a) {
  require_defined(a, "colsum");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    const double* row = da.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) out[j] += row[j];
  }
  return make_op(1, n, std::move(out), {a},
                 [m](const Tensor& g) {
                   return std::vector<Tensor>{broadcast_rows(g, m)};
                 },
                 "colsum");
}

Tensor broadcast_rows(const Tensor& v, int rows) {
  require_defined(v, "broadcast_rows");
  if (v.rows() != 1) throw ShapeError("broadcast_rows: source must be 1 x n");
  const int n = v.cols();
  std::vector<double> out(static_cast<size_t>(rows) * n);
  auto dv = v.data();
  for (int i = 0; i < rows; ++i) {
    std::copy(dv.begin(), dv.end(), out.begin() + static_cast<size_t>(i) * n);
  }
  return make_op(rows, n, std::move(out), {v},
                 [](const Tensor& g) {
                   return std::vector<Tensor>{colsum(g)};
                 },
                 "broadcast_rows");
}

// --- transcendental -------------------------------------------------------

Tensor exp_t(const Tensor& a) {
  require_defined(a, "exp");
  std::vector<double> out(a.size());
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(da[i]);
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [a](const Tensor& g) {
                   // recomputed rather than captured, to keep the backward
                   // differentiable without a reference cycle
                   return std::vector<Tensor>{mul(g, exp_t(a))};
                 },
                 "exp");
}

Tensor log_t(const Tensor& a) {
  require_defined(a, "log");
  std::vector<double> out(a.size());
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) {
    if (da[i] <= 0.0) throw ContractError("log: non-positive input");
    out[i] = std::log(da[i]);
  }
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [a](const Tensor& g) {
                   return std::vector<Tensor>{mul(g, pow_const(a, -1.0))};
                 },
                 "log");
}

Tensor pow_const(const Tensor& a, double p) {
  require_defined(a, "pow_const");
  const bool integral_nonneg = p >= 0.0 && p == std::floor(p);
  std::vector<double> out(a.size());
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) {
    if (!integral_nonneg && da[i] <= 0.0) {
      throw ContractError("pow_const: non-positive base with non-integral exponent");
    }
    out[i] = std::pow(da[i], p);
  }
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [a, p](const Tensor& g) {
                   if (p == 0.0) {
                     return std::vector<Tensor>{
                         smul(g, 0.0)};
                   }
                   return std::vector<Tensor>{
                       smul(mul(g, pow_const(a, p - 1.0)), p)};
                 },
                 "pow_const");
}

Tensor tanh_t(const Tensor& a) {
  require_defined(a, "tanh");
  std::vector<double> out(a.size());
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(da[i]);
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [a](const Tensor& g) {
                   Tensor y = tanh_t(a);
                   Tensor one_minus = add_const(smul(mul(y, y), -1.0), 1.0);
                   return std::vector<Tensor>{mul(g, one_minus)};
                 },
                 "tanh");
}

// --- gather / scatter -----------------------------------------------------

Tensor row_select(const Tensor& a, const std::vector<int>& rows) {
  require_defined(a, "row_select");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(rows.size() * static_cast<size_t>(n));
  auto da = a.data();
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= m) {
      throw ContractError("row_select: row index out of range");
    }
    std::copy_n(da.data() + static_cast<size_t>(rows[i]) * n, n,
                out.begin() + i * n);
  }
  return make_op(static_cast<int>(rows.size()), n, std::move(out), {a},
                 [rows, m](const Tensor& g) {
                   return std::vector<Tensor>{row_scatter_add(g, rows, m)};
                 },
                 "row_select");
}

Tensor row_scatter_add(const Tensor& a, const std::vector<int>& rows,
                       int out_rows) {
  require_defined(a, "row_scatter_add");
  if (static_cast<size_t>(a.rows()) != rows.size()) {
    throw ShapeError("row_scatter_add: rows/index mismatch");
  }
  const int n = a.cols();
  std::vector<double> out(static_cast<size_t>(out_rows) * n, 0.0);
  auto da = a.data();
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= out_rows) {
      throw ContractError("row_scatter_add: row index out of range");
    }
    double* dst = out.data() + static_cast<size_t>(rows[i]) * n;
    const double* src = da.data() + i * n;
    for (int j = 0; j < n; ++j) dst[j] += src[j];
  }
  return make_op(out_rows, n, std::move(out), {a},
                 [rows](const Tensor& g) {
                   return std::vector<Tensor>{row_select(g, rows)};
                 },
                 "row_scatter_add");
}

Tensor slice_cols(const Tensor& a, int col0, int width) {
  require_defined(a, "slice_cols");
  const int m = a.rows(), n = a.cols();
  if (col0 < 0 || width <= 0 || col0 + width > n) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  std::vector<double> out(static_cast<size_t>(m) * width);
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    std::copy_n(da.data() + static_cast<size_t>(i) * n + col0, width,
                out.begin() + static_cast<size_t>(i) * width);
  }
  return make_op(m, width, std::move(out), {a},
                 [col0, n](const Tensor& g) {
                   return std::vector<Tensor>{pad_cols(g, col0, n)};
                 },
                 "slice_cols");
}

Tensor pad_cols(const Tensor& a, int col0, int total_cols) {
  require_defined(a, "pad_cols");
  const int m = a.rows(), w = a.cols();
  if (col0 < 0 || col0 + w > total_cols) {
    throw ShapeError("pad_cols: range out of bounds");
  }
  std::vector<double> out(static_cast<size_t>(m) * total_cols, 0.0);
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    std::copy_n(da.data() + static_cast<size_t>(i) * w, w,
                out.begin() + static_cast<size_t>(i) * total_cols + col0);
  }
  return make_op(m, total_cols, std::move(out), {a},
                 [col0, w](const Tensor& g) {
                   return std::vector<Tensor>{slice_cols(g, col0, w)};
                 },
                 "pad_cols");
}

Tensor gather_cols(const Tensor& a, const std::vector<int>& idx) {
  require_defined(a, "gather_cols");
  const int m = a.rows(), n = a.cols();
  if (static_cast<size_t>(m) != idx.size()) {
    throw ShapeError("gather_cols: one index per row required");
  }
  std::vector<double> out(m);
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    if (idx[i] < 0 || idx[i] >= n) {
      throw ContractError("gather_cols: column index out of range");
    }
    out[i] = da[static_cast<size_t>(i) * n + idx[i]];
  }
  return make_op(m, 1, std::move(out), {a},
                 [idx, n](const Tensor& g) {
                   return std::vector<Tensor>{scatter_cols(g, idx, n)};
                 },
                 "gather_cols");
}

Tensor scatter_cols(const Tensor& v, const std::vector<int>& idx, int cols) {
  require_defined(v, "scatter_cols");
  const int m = v.rows();
  if (v.cols() != 1 || static_cast<size_t>(m) != idx.size()) {
    throw ShapeError("scatter_cols: source must be m x 1 with one index per row");
  }
  std::vector<double> out(static_cast<size_t>(m) * cols, 0.0);
  auto dv = v.data();
  for (int i = 0; i < m; ++i) {
    if (idx[i] < 0 || idx[i] >= cols) {
      throw ContractError("scatter_cols: column index out of range");
    }
    out[static_cast<size_t>(i) * cols + idx[i]] = dv[i];
  }
  return make_op(m, cols, std::move(out), {v},
                 [idx](const Tensor& g) {
                   return std::vector<Tensor>{gather_cols(g, idx)};
                 },
                 "scatter_cols");
}

// --- maxima ----------------------------------------------------------------

Tensor rowmax_detached(const Tensor& a) {
  require_defined(a, "rowmax_detached");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(m);
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    double best = da[static_cast<size_t>(i) * n];
    for (int j = 1; j < n; ++j) {
      best = std::max(best, da[static_cast<size_t>(i) * n + j]);
    }
    out[i] = best;
  }
  return make_op(m, 1, std::move(out), {}, nullptr, "rowmax_detached");
}

Tensor rowmax_excluding(const Tensor& a, const std::vector<int>& excluded) {
  require_defined(a, "rowmax_excluding");
  const int m = a.rows(), n = a.cols();
  if (n < 2) throw ContractError("rowmax_excluding: needs at least 2 columns");
  if (static_cast<size_t>(m) != excluded.size()) {
    throw ShapeError("rowmax_excluding: one excluded index per row required");
  }
  std::vector<double> out(m);
  std::vector<int> argmax(m);
  auto da = a.data();
  for (int i = 0; i < m; ++i) {
    if (excluded[i] < 0 || excluded[i] >= n) {
      throw ContractError("rowmax_excluding: excluded index out of range");
    }
    double best = -std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (int j = 0; j < n; ++j) {
      if (j == excluded[i]) continue;
      const double v = da[static_cast<size_t>(i) * n + j];
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    out[i] = best;
    argmax[i] = best_j;
  }
  return make_op(m, 1, std::move(out), {a},
                 [argmax, n](const Tensor& g) {
                   return std::vector<Tensor>{scatter_cols(g, argmax, n)};
                 },
                 "rowmax_excluding");
}

// --- composites -------------------------------------------------------------

Tensor softmax_rows(const Tensor& z) {
  require_defined(z, "softmax_rows");
  const int n = z.cols();
  Tensor m = rowmax_detached(z);
  Tensor e = exp_t(sub(z, broadcast_cols(m, n)));
  Tensor s = rowsum(e);
  return mul(e, broadcast_cols(pow_const(s, -1.0), n));
}

Tensor log_softmax_rows(const Tensor& z) {
  require_defined(z, "log_softmax_rows");
  const int n = z.cols();
  Tensor m = rowmax_detached(z);
  Tensor zs = sub(z, broadcast_cols(m, n));
  Tensor lse = log_t(rowsum(exp_t(zs)));
  return sub(zs, broadcast_cols(lse, n));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask) {
  require_defined(logits, "cross_entropy");
  const int m = logits.rows(), n = logits.cols();
  if (targets.size() != static_cast<size_t>(m) ||
      mask.size() != static_cast<size_t>(m)) {
    throw ShapeError("cross_entropy: targets/mask must have one entry per row");
  }
  for (int t : targets) {
    if (t < 0 || t >= n) {
      throw ContractError("cross_entropy: target outside vocabulary");
    }
  }
  int count = 0;
  std::vector<double> mask_d(m, 0.0);
  for (int i = 0; i < m; ++i) {
    if (mask[i]) {
      mask_d[i] = 1.0;
      ++count;
    }
  }
  if (count == 0) {
    throw ContractError("cross_entropy: empty selection (all positions masked)");
  }
  Tensor logp = log_softmax_rows(logits);
  Tensor picked = gather_cols(logp, targets);
  Tensor masked = mul(picked, Tensor::from_data(m, 1, std::move(mask_d)));
  return smul(sum_all(masked), -1.0 / count);
}

// --- autodiff ---------------------------------------------------------------

GradMap grad(const Tensor& loss, std::span<const Tensor> wrt) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("grad: loss must be a defined 1x1 tensor");
  }
  GradMap result;
  auto zero_like = [](const Tensor& t) {
    return Tensor::zeros(t.rows(), t.cols());
  };
  if (!loss.requires_grad()) {
    for (const Tensor& t : wrt) result.emplace(t.id(), zero_like(t));
    return result;
  }

  // Iterative post-order DFS over the differentiable subgraph.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> visited;
  std::vector<std::pair<Tensor::Node*, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next_child] = stack.back();
    if (next_child < n->parents.size()) {
      Tensor::Node* p = n->parents[next_child].node();
      ++next_child;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  std::unordered_map<Tensor::Node*, Tensor> gmap;
  gmap.emplace(loss.node(), Tensor::full(1, 1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* n = *it;
    auto git = gmap.find(n);
    if (git == gmap.end() || !n->backward) continue;
    std::vector<Tensor> partials = n->backward(git->second);
    if (partials.size() != n->parents.size()) {
      throw ContractError("grad: backward returned wrong arity");
    }
    for (size_t i = 0; i < partials.size(); ++i) {
      Tensor::Node* p = n->parents[i].node();
      if (!p || !p->requires_grad) continue;
      auto pit = gmap.find(p);
      if (pit == gmap.end()) {
        gmap.emplace(p, partials[i]);
      } else {
        pit->second = add(pit->second, partials[i]);
      }
    }
  }

  for (const Tensor& t : wrt) {
    auto it = gmap.find(t.node());
    if (it != gmap.end()) {
      result.emplace(t.id(), it->second);
    } else {
      result.emplace(t.id(), zero_like(t));
    }
  }
  return result;
}

Tensor grad_of(const GradMap& m, const Tensor& t) {
  auto it = m.find(t.id());
  if (it == m.end()) return Tensor::zeros(t.rows(), t.cols());
  return it->second;
}

std::pair<double, Tensor> grad_norm_grad(
    const std::function<Tensor(const Tensor&)>& scalar_fn, const Tensor& a) {
  Tensor y = scalar_fn(a);
  if (!y.defined() || y.rows() != 1 || y.cols() != 1) {
    throw ContractError("grad_norm_grad: scalar_fn must return a 1x1 tensor");
  }
  const Tensor wrt[] = {a};
  GradMap first = grad(y, wrt);
  Tensor ga = grad_of(first, a);
  Tensor penalty = sum_all(mul(ga, ga));
  GradMap second = grad(penalty, wrt);
  return {penalty.item(), grad_of(second, a)};
}

double finite_diff_check(
    const std::function<Tensor(std::span<const Tensor>)>& loss_fn,
    std::span<Tensor> params, double h) {
  if (h < 1e-7 || h > 1e-3) {
    throw ContractError("finite_diff_check: h must lie in [1e-7, 1e-3]");
  }
  std::vector<Tensor> view(params.begin(), params.end());
  Tensor loss = loss_fn(view);
  GradMap gm = grad(loss, view);
  double max_rel = 0.0;
  for (Tensor& p : params) {
    Tensor g = grad_of(gm, p);
    auto gd = g.data();
    double* pd = p.mutable_data();
    for (size_t i = 0; i < p.size(); ++i) {
      const double orig = pd[i];
      pd[i] = orig + h;
      const double f_plus = loss_fn(view).item();
      pd[i] = orig - h;
      const double f_minus = loss_fn(view).item();
      pd[i] = orig;
      const double central = (f_plus - f_minus) / (2.0 * h);
      const double rel = std::abs(gd[i] - central) / (std::abs(gd[i]) + 1e-12);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace alter::numkit
