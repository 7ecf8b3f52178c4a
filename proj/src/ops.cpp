#include "taml/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "taml/error.hpp"

namespace taml {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.shared_node()->value) {
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

void record_if_needed(const char* op, std::initializer_list<Tensor> inputs,
                      const Tensor& out, std::function<void()> fn) {
  ensure_finite(out, op);
  Tape* tape = Tape::active();
  if (!tape) return;
  bool any = false;
  for (const Tensor& t : inputs) any = any || grad_connected(t);
  if (!any) return;
  std::vector<NodePtr> in_nodes;
  in_nodes.reserve(inputs.size());
  for (const Tensor& t : inputs) in_nodes.push_back(t.shared_node());
  tape->record(std::move(in_nodes), out.shared_node(), std::move(fn));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_matrix(const char* op, const Tensor& x) {
  if (x.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_str(x.shape()));
}

void require_row_vec(const char* op, const Tensor& x, const Tensor& v) {
  require_matrix(op, x);
  if (v.shape().size() != 1 || v.shape()[0] != x.cols())
    throw ShapeError(std::string(op) + ": vector " + shape_str(v.shape()) +
                     " does not broadcast over rows of " + shape_str(x.shape()));
}

void require_col_vec(const char* op, const Tensor& x, const Tensor& u) {
  require_matrix(op, x);
  if (u.shape().size() != 1 || u.shape()[0] != x.rows())
    throw ShapeError(std::string(op) + ": vector " + shape_str(u.shape()) +
                     " does not broadcast over columns of " + shape_str(x.shape()));
}

// Elementwise binary op on identically-shaped tensors.
template <typename Fwd, typename Bwd>
Tensor binary_same(const char* op, const Tensor& a, const Tensor& b, Fwd fwd,
                   Bwd bwd) {
  require_same_shape(op, a, b);
  Tensor out = make_op_output(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mutable_data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  auto an = a.shared_node();
  auto bn = b.shared_node();
  auto on = out.shared_node();
  const bool need_a = grad_connected(a);
  const bool need_b = grad_connected(b);
  record_if_needed(op, {a, b}, out, [an, bn, on, need_a, need_b, bwd]() {
    const std::size_t n = on->size();
    const double* g = on->grad.data();
    double* ga = need_a ? an->grad_data() : nullptr;
    double* gb = need_b ? bn->grad_data() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      bwd(g[i], an->value[i], bn->value[i], on->value[i],
          ga ? &ga[i] : nullptr, gb ? &gb[i] : nullptr);
  });
  return out;
}

// Elementwise unary op.
template <typename Fwd, typename Bwd>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = make_op_output(x.shape());
  const double* px = x.data();
  double* po = out.mutable_data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  auto xn = x.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  record_if_needed(op, {x}, out, [xn, on, need_x, bwd]() {
    if (!need_x) return;
    const std::size_t n = on->size();
    const double* g = on->grad.data();
    double* gx = xn->grad_data();
    for (std::size_t i = 0; i < n; ++i)
      gx[i] += bwd(g[i], xn->value[i], on->value[i]);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double, double* ga, double* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_same(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double x, double y, double, double* ga, double* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * x / (y * y);
      });
}

namespace {

enum class RowOp { Add, Sub, Mul, Div };

Tensor row_broadcast(const char* op, RowOp kind, const Tensor& x,
                     const Tensor& v) {
  require_row_vec(op, x, v);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = make_op_output({r, c});
  const double* px = x.data();
  const double* pv = v.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double a = px[i * c + j], b = pv[j];
      double y = 0;
      switch (kind) {
        case RowOp::Add: y = a + b; break;
        case RowOp::Sub: y = a - b; break;
        case RowOp::Mul: y = a * b; break;
        case RowOp::Div: y = a / b; break;
      }
      po[i * c + j] = y;
    }
  }
  auto xn = x.shared_node();
  auto vn = v.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  const bool need_v = grad_connected(v);
  record_if_needed(op, {x, v}, out, [xn, vn, on, need_x, need_v, kind, r, c]() {
    const double* g = on->grad.data();
    double* gx = need_x ? xn->grad_data() : nullptr;
    double* gv = need_v ? vn->grad_data() : nullptr;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double gij = g[i * c + j];
        const double a = xn->value[i * c + j];
        const double b = vn->value[j];
        switch (kind) {
          case RowOp::Add:
            if (gx) gx[i * c + j] += gij;
            if (gv) gv[j] += gij;
            break;
          case RowOp::Sub:
            if (gx) gx[i * c + j] += gij;
            if (gv) gv[j] -= gij;
            break;
          case RowOp::Mul:
            if (gx) gx[i * c + j] += gij * b;
            if (gv) gv[j] += gij * a;
            break;
          case RowOp::Div:
            if (gx) gx[i * c + j] += gij / b;
            if (gv) gv[j] -= gij * a / (b * b);
            break;
        }
      }
    }
  });
  return out;
}

Tensor col_broadcast(const char* op, RowOp kind, const Tensor& x,
                     const Tensor& u) {
  require_col_vec(op, x, u);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = make_op_output({r, c});
  const double* px = x.data();
  const double* pu = u.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    const double b = pu[i];
    for (std::size_t j = 0; j < c; ++j) {
      const double a = px[i * c + j];
      double y = 0;
      switch (kind) {
        case RowOp::Add: y = a + b; break;
        case RowOp::Sub: y = a - b; break;
        case RowOp::Mul: y = a * b; break;
        case RowOp::Div: y = a / b; break;
      }
      po[i * c + j] = y;
    }
  }
  auto xn = x.shared_node();
  auto un = u.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  const bool need_u = grad_connected(u);
  record_if_needed(op, {x, u}, out, [xn, un, on, need_x, need_u, kind, r, c]() {
    const double* g = on->grad.data();
    double* gx = need_x ? xn->grad_data() : nullptr;
    double* gu = need_u ? un->grad_data() : nullptr;
    for (std::size_t i = 0; i < r; ++i) {
      const double b = un->value[i];
      for (std::size_t j = 0; j < c; ++j) {
        const double gij = g[i * c + j];
        const double a = xn->value[i * c + j];
        switch (kind) {
          case RowOp::Add:
            if (gx) gx[i * c + j] += gij;
            if (gu) gu[i] += gij;
            break;
          case RowOp::Sub:
            if (gx) gx[i * c + j] += gij;
            if (gu) gu[i] -= gij;
            break;
          case RowOp::Mul:
            if (gx) gx[i * c + j] += gij * b;
            if (gu) gu[i] += gij * a;
            break;
          case RowOp::Div:
            if (gx) gx[i * c + j] += gij / b;
            if (gu) gu[i] -= gij * a / (b * b);
            break;
        }
      }
    }
  });
  return out;
}

}  // namespace

Tensor add_rows(const Tensor& x, const Tensor& v) { return row_broadcast("add_rows", RowOp::Add, x, v); }
Tensor sub_rows(const Tensor& x, const Tensor& v) { return row_broadcast("sub_rows", RowOp::Sub, x, v); }
Tensor mul_rows(const Tensor& x, const Tensor& v) { return row_broadcast("mul_rows", RowOp::Mul, x, v); }
Tensor div_rows(const Tensor& x, const Tensor& v) { return row_broadcast("div_rows", RowOp::Div, x, v); }
Tensor add_cols(const Tensor& x, const Tensor& u) { return col_broadcast("add_cols", RowOp::Add, x, u); }
Tensor mul_cols(const Tensor& x, const Tensor& u) { return col_broadcast("mul_cols", RowOp::Mul, x, u); }
Tensor div_cols(const Tensor& x, const Tensor& u) { return col_broadcast("div_cols", RowOp::Div, x, u); }

Tensor scale(const Tensor& x, double c) {
  return unary(
      "scale", x, [c](double v) { return c * v; },
      [c](double g, double, double) { return g * c; });
}

Tensor add_const(const Tensor& x, double c) {
  return unary(
      "add_const", x, [c](double v) { return v + c; },
      [](double g, double, double) { return g; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor mul_scalar_t(const Tensor& x, const Tensor& s) {
  if (s.size() != 1)
    throw ShapeError("mul_scalar_t: scalar operand has shape " +
                     shape_str(s.shape()));
  Tensor out = make_op_output(x.shape());
  const double sv = s.data()[0];
  const double* px = x.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] * sv;
  auto xn = x.shared_node();
  auto sn = s.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  const bool need_s = grad_connected(s);
  record_if_needed("mul_scalar_t", {x, s}, out, [xn, sn, on, need_x, need_s]() {
    const double* g = on->grad.data();
    const double sv = sn->value[0];
    if (need_x) {
      double* gx = xn->grad_data();
      for (std::size_t i = 0; i < on->size(); ++i) gx[i] += g[i] * sv;
    }
    if (need_s) {
      double acc = 0.0;
      for (std::size_t i = 0; i < on->size(); ++i) acc += g[i] * xn->value[i];
      sn->grad_data()[0] += acc;
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      // subgradient at 0 is 0
      [](double g, double v, double) { return v > 0.0 ? g : 0.0; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](double v) {
        double y = std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
        // keep the "strictly positive" contract even past f64 underflow
        return std::max(y, std::numeric_limits<double>::denorm_min());
      },
      [](double g, double v, double) {
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                  : std::exp(v) / (1.0 + std::exp(v));
        return g * s;
      });
}

Tensor exp_t(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double g, double, double y) { return g * y; });
}

Tensor sqrt_t(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double g, double, double y) { return g * 0.5 / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_op_output({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  auto an = a.shared_node();
  auto bn = b.shared_node();
  auto on = out.shared_node();
  const bool need_a = grad_connected(a);
  const bool need_b = grad_connected(b);
  record_if_needed("matmul", {a, b}, out, [an, bn, on, need_a, need_b, m, k, n]() {
    const double* g = on->grad.data();
    if (need_a) {
      double* ga = an->grad_data();
      // dA[i,k] += sum_j g[i,j] * B[k,j]
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* brow = bn->value.data() + kk * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + kk] += acc;
        }
      }
    }
    if (need_b) {
      double* gb = bn->grad_data();
      // dB[k,j] += sum_i A[i,k] * g[i,j]
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double aik = an->value[i * k + kk];
          double* gbrow = gb + kk * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = make_op_output({c, r});
  const double* pa = a.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) po[j * r + i] = pa[i * c + j];
  auto an = a.shared_node();
  auto on = out.shared_node();
  const bool need_a = grad_connected(a);
  record_if_needed("transpose", {a}, out, [an, on, need_a, r, c]() {
    if (!need_a) return;
    const double* g = on->grad.data();
    double* ga = an->grad_data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
  return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix("affine", x);
  require_matrix("affine", w);
  if (x.cols() != w.rows())
    throw ShapeError("affine: inner dimensions disagree, x " +
                     shape_str(x.shape()) + " vs w " + shape_str(w.shape()));
  if (b.shape().size() != 1 || b.shape()[0] != w.cols())
    throw ShapeError("affine: bias " + shape_str(b.shape()) +
                     " does not match w " + shape_str(w.shape()));
  return add_rows(matmul(x, w), b);
}

Tensor sum_all(const Tensor& x) {
  if (x.size() == 0) throw ContractError("sum_all: empty reduction");
  Tensor out = make_op_output({1});
  double acc = 0.0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
  out.mutable_data()[0] = acc;
  auto xn = x.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  record_if_needed("sum_all", {x}, out, [xn, on, need_x]() {
    if (!need_x) return;
    const double g = on->grad[0];
    double* gx = xn->grad_data();
    for (std::size_t i = 0; i < xn->size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor col_sum(const Tensor& x) {
  require_matrix("col_sum", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (r == 0) throw ContractError("col_sum: empty reduction over sample axis");
  Tensor out = make_op_output({c});
  const double* px = x.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) po[j] += px[i * c + j];
  auto xn = x.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  record_if_needed("col_sum", {x}, out, [xn, on, need_x, r, c]() {
    if (!need_x) return;
    const double* g = on->grad.data();
    double* gx = xn->grad_data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j];
  });
  return out;
}

Tensor row_sum(const Tensor& x) {
  require_matrix("row_sum", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw ContractError("row_sum: empty reduction over channel axis");
  Tensor out = make_op_output({r});
  const double* px = x.data();
  double* po = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += px[i * c + j];
    po[i] = acc;
  }
  auto xn = x.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  record_if_needed("row_sum", {x}, out, [xn, on, need_x, r, c]() {
    if (!need_x) return;
    const double* g = on->grad.data();
    double* gx = xn->grad_data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
  });
  return out;
}

Tensor col_mean(const Tensor& x) {
  return scale(col_sum(x), 1.0 / static_cast<double>(x.rows()));
}

std::pair<Tensor, Tensor> moments(const Tensor& x) {
  require_matrix("moments", x);
  if (x.rows() == 0) throw ContractError("moments: empty reduction (B == 0)");
  Tensor mean = col_mean(x);
  Tensor centered = sub_rows(x, mean);
  Tensor var = col_mean(mul(centered, centered));
  return {mean, var};
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", x);
  if (begin > end || end > x.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of " + shape_str(x.shape()));
  const std::size_t c = x.cols(), r = end - begin;
  Tensor out = make_op_output({r, c});
  std::copy(x.data() + begin * c, x.data() + end * c, out.mutable_data());
  auto xn = x.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  record_if_needed("slice_rows", {x}, out, [xn, on, need_x, begin, r, c]() {
    if (!need_x) return;
    const double* g = on->grad.data();
    double* gx = xn->grad_data();
    for (std::size_t i = 0; i < r * c; ++i) gx[begin * c + i] += g[i];
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const Tensor& p : parts) {
    require_matrix("concat_rows", p);
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " +
                       shape_str(p.shape()) + " vs expected width " +
                       std::to_string(c));
    r += p.rows();
  }
  Tensor out = make_op_output({r, c});
  double* po = out.mutable_data();
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.size(), po + off);
    off += p.size();
  }
  ensure_finite(out, "concat_rows");
  Tape* tape = Tape::active();
  bool any = false;
  for (const Tensor& p : parts) any = any || grad_connected(p);
  if (tape && any) {
    std::vector<NodePtr> in_nodes;
    std::vector<bool> needs;
    for (const Tensor& p : parts) {
      in_nodes.push_back(p.shared_node());
      needs.push_back(grad_connected(p));
    }
    auto on = out.shared_node();
    auto nodes = in_nodes;
    tape->record(std::move(in_nodes), on, [nodes, needs, on]() {
      const double* g = on->grad.data();
      std::size_t off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const std::size_t n = nodes[k]->size();
        if (needs[k]) {
          double* gx = nodes[k]->grad_data();
          for (std::size_t i = 0; i < n; ++i) gx[i] += g[off + i];
        }
        off += n;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
  require_matrix("gather_rows", x);
  const std::size_t c = x.cols();
  Tensor out = make_op_output({indices.size(), c});
  double* po = out.mutable_data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || static_cast<std::size_t>(i) >= x.rows())
      throw IndexError("gather_rows: row index " + std::to_string(i) +
                       " out of " + shape_str(x.shape()));
    std::copy(x.data() + i * c, x.data() + (i + 1) * c, po + k * c);
  }
  auto xn = x.shared_node();
  auto on = out.shared_node();
  const bool need_x = grad_connected(x);
  auto idx = indices;
  record_if_needed("gather_rows", {x}, out, [xn, on, need_x, idx, c]() {
    if (!need_x) return;
    const double* g = on->grad.data();
    double* gx = xn->grad_data();
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < c; ++j)
        gx[static_cast<std::size_t>(idx[k]) * c + j] += g[k * c + j];
  });
  return out;
}

Tensor detach(const Tensor& x) {
  return Tensor::from(x.to_vector(), x.shape());
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_matrix("cross_entropy", logits);
  const std::size_t b = logits.rows(), n = logits.cols();
  if (labels.size() != b)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw IndexError("cross_entropy: label " + std::to_string(y) +
                       " out of range [0," + std::to_string(n) + ")");
  Tensor out = make_op_output({1});
  const double* pl = logits.data();
  // softmax probabilities are kept for the backward rule
  std::vector<double> probs(b * n);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = pl + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < n; ++j)
      probs[i * n + j] = std::exp(row[j] - lse);
  }
  out.mutable_data()[0] = loss / static_cast<double>(b);
  auto ln = logits.shared_node();
  auto on = out.shared_node();
  const bool need_l = grad_connected(logits);
  auto lbl = labels;
  record_if_needed("cross_entropy", {logits}, out,
                   [ln, on, need_l, probs = std::move(probs), lbl, b, n]() {
                     if (!need_l) return;
                     const double g = on->grad[0] / static_cast<double>(b);
                     double* gl = ln->grad_data();
                     for (std::size_t i = 0; i < b; ++i) {
                       for (std::size_t j = 0; j < n; ++j) {
                         double d = probs[i * n + j];
                         if (j == static_cast<std::size_t>(lbl[i])) d -= 1.0;
                         gl[i * n + j] += g * d;
                       }
                     }
                   });
  return out;
}

std::size_t argmax_row(const Tensor& x, std::size_t row) {
  const std::size_t c = x.cols();
  const double* p = x.data() + row * c;
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

}  // namespace taml
