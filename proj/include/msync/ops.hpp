#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "msync/errors.hpp"
#include "msync/rng.hpp"
#include "msync/tape.hpp"
#include "msync/tensor.hpp"

// Differentiable primitive set. Free functions over Tape vars; every op
// here is covered by the finite-difference suite in tests.

namespace msync {

enum class Reduction { sum, mean };

namespace detail {

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": " + Tensor<S>::shape_string(a.shape()) +
                        " vs " + Tensor<S>::shape_string(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  detail::require_same_shape(t.val(a), t.val(b), "add");
  Tensor<S> out(t.val(a).shape());
  out.vec() = t.val(a).vec() + t.val(b).vec();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, a, b, o] {
    if (t.needs_grad(a)) t.grad(a).vec() += t.grad(o).vec();
    if (t.needs_grad(b)) t.grad(b).vec() += t.grad(o).vec();
  });
}

template <typename S>
Var sub(Tape<S>& t, Var a, Var b) {
  detail::require_same_shape(t.val(a), t.val(b), "sub");
  Tensor<S> out(t.val(a).shape());
  out.vec() = t.val(a).vec() - t.val(b).vec();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, a, b, o] {
    if (t.needs_grad(a)) t.grad(a).vec() += t.grad(o).vec();
    if (t.needs_grad(b)) t.grad(b).vec() -= t.grad(o).vec();
  });
}

template <typename S>
Var mul(Tape<S>& t, Var a, Var b) {
  detail::require_same_shape(t.val(a), t.val(b), "mul");
  Tensor<S> out(t.val(a).shape());
  out.vec() = t.val(a).vec().cwiseProduct(t.val(b).vec());
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, a, b, o] {
    if (t.needs_grad(a)) t.grad(a).vec() += t.grad(o).vec().cwiseProduct(t.val(b).vec());
    if (t.needs_grad(b)) t.grad(b).vec() += t.grad(o).vec().cwiseProduct(t.val(a).vec());
  });
}

template <typename S>
Var scale(Tape<S>& t, Var x, S c) {
  Tensor<S> out(t.val(x).shape());
  out.vec() = t.val(x).vec() * c;
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, c, o] {
    if (t.needs_grad(x)) t.grad(x).vec() += t.grad(o).vec() * c;
  });
}

// x scaled by a rank-0 tape variable (scalar mix weights, loss averaging).
template <typename S>
Var scale_by(Tape<S>& t, Var x, Var s) {
  if (t.val(s).size() != 1) throw ShapeMismatch("scale_by: scale is not scalar");
  Tensor<S> out(t.val(x).shape());
  out.vec() = t.val(x).vec() * t.val(s)[0];
  const bool ng = t.needs_grad(x) || t.needs_grad(s);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, x, s, o] {
    if (t.needs_grad(x)) t.grad(x).vec() += t.grad(o).vec() * t.val(s)[0];
    if (t.needs_grad(s)) t.grad(s)[0] += t.grad(o).vec().dot(t.val(x).vec());
  });
}

// ------------------------------------------------------------- broadcasting

// m[r,c] + v[c] for every row.
template <typename S>
Var add_rowvec(Tape<S>& t, Var m, Var v) {
  const auto& mv = t.val(m);
  if (mv.rank() != 2 || t.val(v).size() != mv.dim(1))
    throw ShapeMismatch("add_rowvec");
  Tensor<S> out(mv.shape());
  out.mat() = mv.mat().rowwise() + t.val(v).vec().transpose();
  const bool ng = t.needs_grad(m) || t.needs_grad(v);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, m, v, o] {
    const auto g = t.grad(o).mat();
    if (t.needs_grad(m)) t.grad(m).mat() += g;
    if (t.needs_grad(v)) t.grad(v).vec() += g.colwise().sum().transpose();
  });
}

// m[r,c] + v[r] for every column.
template <typename S>
Var add_colvec(Tape<S>& t, Var m, Var v) {
  const auto& mv = t.val(m);
  if (mv.rank() != 2 || t.val(v).size() != mv.dim(0))
    throw ShapeMismatch("add_colvec");
  Tensor<S> out(mv.shape());
  out.mat() = mv.mat().colwise() + t.val(v).vec();
  const bool ng = t.needs_grad(m) || t.needs_grad(v);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, m, v, o] {
    const auto g = t.grad(o).mat();
    if (t.needs_grad(m)) t.grad(m).mat() += g;
    if (t.needs_grad(v)) t.grad(v).vec() += g.rowwise().sum();
  });
}

// ------------------------------------------------------------ linear algebra

template <typename S>
Var matmul(Tape<S>& t, Var a, Var b, bool trans_a = false, bool trans_b = false) {
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  if (av.rank() != 2 || bv.rank() != 2) throw ShapeMismatch("matmul: rank-2 required");
  const Index am = trans_a ? av.dim(1) : av.dim(0);
  const Index ak = trans_a ? av.dim(0) : av.dim(1);
  const Index bk = trans_b ? bv.dim(1) : bv.dim(0);
  const Index bn = trans_b ? bv.dim(0) : bv.dim(1);
  if (ak != bk)
    throw ShapeMismatch("matmul: inner extents " + std::to_string(ak) + " vs " +
                        std::to_string(bk));
  Tensor<S> out({am, bn});
  if (!trans_a && !trans_b)
    out.mat().noalias() = av.mat() * bv.mat();
  else if (!trans_a && trans_b)
    out.mat().noalias() = av.mat() * bv.mat().transpose();
  else if (trans_a && !trans_b)
    out.mat().noalias() = av.mat().transpose() * bv.mat();
  else
    out.mat().noalias() = av.mat().transpose() * bv.mat().transpose();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, a, b, o, trans_a, trans_b] {
    const auto g = t.grad(o).mat();
    const auto A = t.val(a).mat();
    const auto B = t.val(b).mat();
    if (t.needs_grad(a)) {
      auto ga = t.grad(a).mat();
      if (!trans_a && !trans_b)
        ga.noalias() += g * B.transpose();
      else if (!trans_a && trans_b)
        ga.noalias() += g * B;
      else if (trans_a && !trans_b)
        ga.noalias() += B * g.transpose();
      else
        ga.noalias() += B.transpose() * g.transpose();
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b).mat();
      if (!trans_a && !trans_b)
        gb.noalias() += A.transpose() * g;
      else if (!trans_a && trans_b)
        gb.noalias() += g.transpose() * A;
      else if (trans_a && !trans_b)
        gb.noalias() += A * g;
      else
        gb.noalias() += g.transpose() * A.transpose();
    }
  });
}

template <typename S>
Var transpose(Tape<S>& t, Var x) {
  const auto& xv = t.val(x);
  if (xv.rank() != 2) throw ShapeMismatch("transpose: rank-2 required");
  Tensor<S> out({xv.dim(1), xv.dim(0)});
  out.mat() = xv.mat().transpose();
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o] {
    if (t.needs_grad(x)) t.grad(x).mat() += t.grad(o).mat().transpose();
  });
}

// --------------------------------------------------------- shape and motion

template <typename S>
Var reshape(Tape<S>& t, Var x, std::vector<Index> shape) {
  Tensor<S> out = t.val(x).reshaped(shape);
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o] {
    if (t.needs_grad(x)) t.grad(x).vec() += t.grad(o).vec();
  });
}

// Concatenate along `axis` (0 = stack rows, 1 = side by side). Rank-1
// inputs are only valid with axis 0.
template <typename S>
Var concat(Tape<S>& t, const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ShapeMismatch("concat: no inputs");
  const int rank = t.val(xs[0]).rank();
  if (rank == 1) {
    if (axis != 0) throw ShapeMismatch("concat: rank-1 needs axis 0");
    Index total = 0;
    for (Var x : xs) total += t.val(x).size();
    Tensor<S> out({total});
    Index at = 0;
    bool ng = false;
    for (Var x : xs) {
      out.vec().segment(at, t.val(x).size()) = t.val(x).vec();
      at += t.val(x).size();
      ng = ng || t.needs_grad(x);
    }
    Var o{t.next_index()};
    return t.push(std::move(out), ng, [&t, xs, o] {
      Index at = 0;
      for (Var x : xs) {
        const Index n = t.val(x).size();
        if (t.needs_grad(x)) t.grad(x).vec() += t.grad(o).vec().segment(at, n);
        at += n;
      }
    });
  }
  if (rank != 2 || (axis != 0 && axis != 1)) throw ShapeMismatch("concat: bad axis/rank");
  Index rows = axis == 0 ? 0 : t.val(xs[0]).dim(0);
  Index cols = axis == 1 ? 0 : t.val(xs[0]).dim(1);
  bool ng = false;
  for (Var x : xs) {
    const auto& v = t.val(x);
    if (v.rank() != 2) throw ShapeMismatch("concat: mixed ranks");
    if (axis == 0) {
      if (v.dim(1) != cols) throw ShapeMismatch("concat axis 0: column mismatch");
      rows += v.dim(0);
    } else {
      if (v.dim(0) != rows) throw ShapeMismatch("concat axis 1: row mismatch");
      cols += v.dim(1);
    }
    ng = ng || t.needs_grad(x);
  }
  Tensor<S> out({rows, cols});
  Index at = 0;
  for (Var x : xs) {
    const auto& v = t.val(x);
    if (axis == 0) {
      out.mat().middleRows(at, v.dim(0)) = v.mat();
      at += v.dim(0);
    } else {
      out.mat().middleCols(at, v.dim(1)) = v.mat();
      at += v.dim(1);
    }
  }
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, xs, axis, o] {
    Index at = 0;
    for (Var x : xs) {
      const auto& v = t.val(x);
      const Index n = axis == 0 ? v.dim(0) : v.dim(1);
      if (t.needs_grad(x)) {
        if (axis == 0)
          t.grad(x).mat() += t.grad(o).mat().middleRows(at, n);
        else
          t.grad(x).mat() += t.grad(o).mat().middleCols(at, n);
      }
      at += n;
    }
  });
}

// Contiguous slice along `axis` of a rank-1 or rank-2 tensor.
template <typename S>
Var slice(Tape<S>& t, Var x, int axis, Index start, Index len) {
  const auto& xv = t.val(x);
  if (xv.rank() == 1) {
    if (axis != 0 || start < 0 || start + len > xv.size())
      throw ShapeMismatch("slice: out of range");
    Tensor<S> out({len});
    out.vec() = xv.vec().segment(start, len);
    Var o{t.next_index()};
    return t.push(std::move(out), t.needs_grad(x), [&t, x, start, len, o] {
      if (t.needs_grad(x)) t.grad(x).vec().segment(start, len) += t.grad(o).vec();
    });
  }
  if (xv.rank() != 2) throw ShapeMismatch("slice: rank-1/2 only");
  const Index extent = axis == 0 ? xv.dim(0) : xv.dim(1);
  if ((axis != 0 && axis != 1) || start < 0 || start + len > extent)
    throw ShapeMismatch("slice: out of range");
  Tensor<S> out(axis == 0 ? std::vector<Index>{len, xv.dim(1)}
                          : std::vector<Index>{xv.dim(0), len});
  if (axis == 0)
    out.mat() = xv.mat().middleRows(start, len);
  else
    out.mat() = xv.mat().middleCols(start, len);
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, axis, start, len, o] {
    if (!t.needs_grad(x)) return;
    if (axis == 0)
      t.grad(x).mat().middleRows(start, len) += t.grad(o).mat();
    else
      t.grad(x).mat().middleCols(start, len) += t.grad(o).mat();
  });
}

// Row r of a rank-2 tensor, as rank-1.
template <typename S>
Var row(Tape<S>& t, Var x, Index r) {
  return reshape(t, slice(t, x, 0, r, 1), {t.val(x).dim(1)});
}

// Embedding lookup: rows of `table` at `ids`. Backward scatter-adds.
template <typename S>
Var gather_rows(Tape<S>& t, Var table, std::vector<Index> ids) {
  const auto& tv = t.val(table);
  if (tv.rank() != 2) throw ShapeMismatch("gather_rows: table must be rank-2");
  for (Index id : ids)
    if (id < 0 || id >= tv.dim(0))
      throw ShapeMismatch("gather_rows: id " + std::to_string(id) + " out of " +
                          std::to_string(tv.dim(0)));
  Tensor<S> out({Index(ids.size()), tv.dim(1)});
  for (size_t i = 0; i < ids.size(); ++i) out.mat().row(Index(i)) = tv.mat().row(ids[i]);
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(table),
                [&t, table, ids = std::move(ids), o] {
                  if (!t.needs_grad(table)) return;
                  auto g = t.grad(table).mat();
                  for (size_t i = 0; i < ids.size(); ++i)
                    g.row(ids[i]) += t.grad(o).mat().row(Index(i));
                });
}

// Element pick m[rows[i], cols[i]] -> rank-1.
template <typename S>
Var pick(Tape<S>& t, Var m, std::vector<Index> rows, std::vector<Index> cols) {
  const auto& mv = t.val(m);
  if (mv.rank() != 2 || rows.size() != cols.size()) throw ShapeMismatch("pick");
  for (size_t i = 0; i < rows.size(); ++i)
    if (rows[i] < 0 || rows[i] >= mv.dim(0) || cols[i] < 0 || cols[i] >= mv.dim(1))
      throw ShapeMismatch("pick: index out of range");
  Tensor<S> out({Index(rows.size())});
  for (size_t i = 0; i < rows.size(); ++i) out[Index(i)] = mv.at(rows[i], cols[i]);
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(m),
                [&t, m, rows = std::move(rows), cols = std::move(cols), o] {
                  if (!t.needs_grad(m)) return;
                  for (size_t i = 0; i < rows.size(); ++i)
                    t.grad(m).at(rows[i], cols[i]) += t.grad(o)[Index(i)];
                });
}

template <typename S>
Var pick_vec(Tape<S>& t, Var v, std::vector<Index> idx) {
  const auto& vv = t.val(v);
  if (vv.rank() != 1) throw ShapeMismatch("pick_vec");
  for (Index i : idx)
    if (i < 0 || i >= vv.size()) throw ShapeMismatch("pick_vec: index out of range");
  Tensor<S> out({Index(idx.size())});
  for (size_t i = 0; i < idx.size(); ++i) out[Index(i)] = vv[idx[i]];
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(v), [&t, v, idx = std::move(idx), o] {
    if (!t.needs_grad(v)) return;
    for (size_t i = 0; i < idx.size(); ++i) t.grad(v)[idx[i]] += t.grad(o)[Index(i)];
  });
}

// ------------------------------------------------------------- reductions

template <typename S>
Var sum(Tape<S>& t, Var x) {
  Tensor<S> out = Tensor<S>::scalar(t.val(x).vec().sum());
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o] {
    if (t.needs_grad(x)) t.grad(x).vec().array() += t.grad(o)[0];
  });
}

template <typename S>
Var mean(Tape<S>& t, Var x) {
  const S inv = S(1) / S(t.val(x).size());
  return scale(t, sum(t, x), inv);
}

// ----------------------------------------------------------- nonlinearities

template <typename S>
Var relu(Tape<S>& t, Var x) {
  Tensor<S> out(t.val(x).shape());
  out.vec() = t.val(x).vec().cwiseMax(S(0));
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o] {
    if (!t.needs_grad(x)) return;
    auto g = t.grad(x).vec().array();
    g += t.grad(o).vec().array() * (t.val(x).vec().array() > S(0)).template cast<S>();
  });
}

// Exact GELU: x * Phi(x).
template <typename S>
Var gelu(Tape<S>& t, Var x) {
  const auto& xv = t.val(x);
  Tensor<S> out(xv.shape());
  for (Index i = 0; i < xv.size(); ++i) {
    const double z = double(xv[i]);
    out[i] = S(z * 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2)));
  }
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o] {
    if (!t.needs_grad(x)) return;
    const auto& xv = t.val(x);
    auto& gx = t.grad(x);
    const auto& go = t.grad(o);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (Index i = 0; i < xv.size(); ++i) {
      const double z = double(xv[i]);
      const double phi = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
      gx[i] += go[i] * S(phi + z * pdf);
    }
  });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var x) {
  Tensor<S> out(t.val(x).shape());
  out.vec() = (S(1) + (-t.val(x).vec().array()).exp()).inverse();
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o] {
    if (!t.needs_grad(x)) return;
    const auto y = t.val(o).vec().array();
    t.grad(x).vec().array() += t.grad(o).vec().array() * y * (S(1) - y);
  });
}

template <typename S>
Var tanh_op(Tape<S>& t, Var x) {
  Tensor<S> out(t.val(x).shape());
  out.vec() = t.val(x).vec().array().tanh();
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o] {
    if (!t.needs_grad(x)) return;
    const auto y = t.val(o).vec().array();
    t.grad(x).vec().array() += t.grad(o).vec().array() * (S(1) - y * y);
  });
}

// --------------------------------------------------- softmax family, losses

namespace detail {

// Stable softmax of one row into `out` (both length n).
template <typename S>
void softmax_row(const S* x, S* out, Index n) {
  S m = x[0];
  for (Index i = 1; i < n; ++i) m = std::max(m, x[i]);
  S z = S(0);
  for (Index i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  for (Index i = 0; i < n; ++i) out[i] /= z;
}

template <typename S>
S logsumexp_row(const S* x, Index n) {
  S m = x[0];
  for (Index i = 1; i < n; ++i) m = std::max(m, x[i]);
  S z = S(0);
  for (Index i = 0; i < n; ++i) z += std::exp(x[i] - m);
  return m + std::log(z);
}

}  // namespace detail

// Softmax along the last axis (rank-1: the whole vector; rank-2: each row).
template <typename S>
Var softmax(Tape<S>& t, Var x) {
  const auto& xv = t.val(x);
  const Index rows = xv.rank() == 2 ? xv.dim(0) : 1;
  const Index cols = xv.rank() == 2 ? xv.dim(1) : xv.size();
  Tensor<S> out(xv.shape());
  for (Index r = 0; r < rows; ++r)
    detail::softmax_row(xv.data() + r * cols, out.data() + r * cols, cols);
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o, rows, cols] {
    if (!t.needs_grad(x)) return;
    for (Index r = 0; r < rows; ++r) {
      const S* y = t.val(o).data() + r * cols;
      const S* gy = t.grad(o).data() + r * cols;
      S* gx = t.grad(x).data() + r * cols;
      S dot = S(0);
      for (Index c = 0; c < cols; ++c) dot += gy[c] * y[c];
      for (Index c = 0; c < cols; ++c) gx[c] += y[c] * (gy[c] - dot);
    }
  });
}

template <typename S>
Var log_softmax(Tape<S>& t, Var x) {
  const auto& xv = t.val(x);
  const Index rows = xv.rank() == 2 ? xv.dim(0) : 1;
  const Index cols = xv.rank() == 2 ? xv.dim(1) : xv.size();
  Tensor<S> out(xv.shape());
  for (Index r = 0; r < rows; ++r) {
    const S lse = detail::logsumexp_row(xv.data() + r * cols, cols);
    for (Index c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] - lse;
  }
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o, rows, cols] {
    if (!t.needs_grad(x)) return;
    for (Index r = 0; r < rows; ++r) {
      const S* y = t.val(o).data() + r * cols;
      const S* gy = t.grad(o).data() + r * cols;
      S* gx = t.grad(x).data() + r * cols;
      S gsum = S(0);
      for (Index c = 0; c < cols; ++c) gsum += gy[c];
      for (Index c = 0; c < cols; ++c) gx[c] += gy[c] - std::exp(y[c]) * gsum;
    }
  });
}

// logsumexp along the last axis: rank-1 -> scalar, rank-2 -> [rows].
template <typename S>
Var logsumexp(Tape<S>& t, Var x) {
  const auto& xv = t.val(x);
  const Index rows = xv.rank() == 2 ? xv.dim(0) : 1;
  const Index cols = xv.rank() == 2 ? xv.dim(1) : xv.size();
  Tensor<S> out(xv.rank() == 2 ? std::vector<Index>{rows} : std::vector<Index>{});
  for (Index r = 0; r < rows; ++r)
    out[r] = detail::logsumexp_row(xv.data() + r * cols, cols);
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o, rows, cols] {
    if (!t.needs_grad(x)) return;
    for (Index r = 0; r < rows; ++r) {
      const S lse = t.val(o)[r];
      const S g = t.grad(o)[r];
      const S* xr = t.val(x).data() + r * cols;
      S* gx = t.grad(x).data() + r * cols;
      for (Index c = 0; c < cols; ++c) gx[c] += g * std::exp(xr[c] - lse);
    }
  });
}

// logsumexp over axis 0 of a rank-2 tensor -> [cols]. Used by the CRF
// forward recursion.
template <typename S>
Var logsumexp_cols(Tape<S>& t, Var x) {
  const auto& xv = t.val(x);
  if (xv.rank() != 2) throw ShapeMismatch("logsumexp_cols: rank-2 required");
  const Index rows = xv.dim(0), cols = xv.dim(1);
  Tensor<S> out({cols});
  for (Index c = 0; c < cols; ++c) {
    S m = xv.at(0, c);
    for (Index r = 1; r < rows; ++r) m = std::max(m, xv.at(r, c));
    S z = S(0);
    for (Index r = 0; r < rows; ++r) z += std::exp(xv.at(r, c) - m);
    out[c] = m + std::log(z);
  }
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o, rows, cols] {
    if (!t.needs_grad(x)) return;
    for (Index c = 0; c < cols; ++c) {
      const S lse = t.val(o)[c];
      const S g = t.grad(o)[c];
      for (Index r = 0; r < rows; ++r)
        t.grad(x).at(r, c) += g * std::exp(t.val(x).at(r, c) - lse);
    }
  });
}

// Cross entropy from logits [N, V] against integer targets; fused and
// numerically stable. Backward is (softmax - one-hot) per row.
template <typename S>
Var cross_entropy(Tape<S>& t, Var logits, std::vector<Index> targets,
                  Reduction red = Reduction::mean) {
  const auto& lv = t.val(logits);
  if (lv.rank() != 2) throw ShapeMismatch("cross_entropy: logits must be [N,V]");
  const Index n = lv.dim(0), v = lv.dim(1);
  if (Index(targets.size()) != n) throw ShapeMismatch("cross_entropy: target count");
  for (Index tgt : targets)
    if (tgt < 0 || tgt >= v) throw ShapeMismatch("cross_entropy: target id out of range");
  double total = 0;
  for (Index r = 0; r < n; ++r) {
    const S lse = detail::logsumexp_row(lv.data() + r * v, v);
    total += double(lse - lv.at(r, targets[size_t(r)]));
  }
  const S denom = red == Reduction::mean ? S(n) : S(1);
  Tensor<S> out = Tensor<S>::scalar(S(total) / denom);
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(logits),
                [&t, logits, targets = std::move(targets), o, n, v, denom] {
                  if (!t.needs_grad(logits)) return;
                  const S g = t.grad(o)[0] / denom;
                  std::vector<S> probs(static_cast<size_t>(v));
                  for (Index r = 0; r < n; ++r) {
                    detail::softmax_row(t.val(logits).data() + r * v, probs.data(), v);
                    S* gx = t.grad(logits).data() + r * v;
                    for (Index c = 0; c < v; ++c) gx[c] += g * probs[size_t(c)];
                    gx[targets[size_t(r)]] -= g;
                  }
                });
}

// ------------------------------------------------------------ normalization

// Layer normalization over the last axis of a rank-2 tensor, with learned
// gain and bias.
template <typename S>
Var layer_norm(Tape<S>& t, Var x, Var gain, Var bias, S eps = S(1e-5)) {
  const auto& xv = t.val(x);
  if (xv.rank() != 2) throw ShapeMismatch("layer_norm: rank-2 required");
  const Index rows = xv.dim(0), cols = xv.dim(1);
  if (t.val(gain).size() != cols || t.val(bias).size() != cols)
    throw ShapeMismatch("layer_norm: gain/bias width");
  Tensor<S> out(xv.shape());
  Tensor<S> xhat(xv.shape());
  Tensor<S> inv_std({rows});
  for (Index r = 0; r < rows; ++r) {
    const S* xr = xv.data() + r * cols;
    S mu = S(0);
    for (Index c = 0; c < cols; ++c) mu += xr[c];
    mu /= S(cols);
    S var = S(0);
    for (Index c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= S(cols);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (Index c = 0; c < cols; ++c) {
      xhat.at(r, c) = (xr[c] - mu) * is;
      out.at(r, c) = xhat.at(r, c) * t.val(gain)[c] + t.val(bias)[c];
    }
  }
  const bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
  Var o{t.next_index()};
  return t.push(std::move(out), ng,
                [&t, x, gain, bias, o, rows, cols, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)] {
                  const auto& go = t.grad(o);
                  for (Index r = 0; r < rows; ++r) {
                    const S* gy = go.data() + r * cols;
                    const S* xh = xhat.data() + r * cols;
                    if (t.needs_grad(gain))
                      for (Index c = 0; c < cols; ++c)
                        t.grad(gain)[c] += gy[c] * xh[c];
                    if (t.needs_grad(bias))
                      for (Index c = 0; c < cols; ++c) t.grad(bias)[c] += gy[c];
                    if (t.needs_grad(x)) {
                      S mean_g = S(0), mean_gx = S(0);
                      std::vector<S> dxhat(static_cast<size_t>(cols));
                      for (Index c = 0; c < cols; ++c) {
                        dxhat[size_t(c)] = gy[c] * t.val(gain)[c];
                        mean_g += dxhat[size_t(c)];
                        mean_gx += dxhat[size_t(c)] * xh[c];
                      }
                      mean_g /= S(cols);
                      mean_gx /= S(cols);
                      S* gx = t.grad(x).data() + r * cols;
                      for (Index c = 0; c < cols; ++c)
                        gx[c] += inv_std[r] * (dxhat[size_t(c)] - mean_g - xh[c] * mean_gx);
                    }
                  }
                });
}

// -------------------------------------------------------------- convolution

// 1-D convolution over the first axis with same padding: x [L, Cin],
// w [k, Cin, Cout], b [Cout] -> [L, Cout]. Character CNN building block.
template <typename S>
Var conv1d_same(Tape<S>& t, Var x, Var w, Var b) {
  const auto& xv = t.val(x);
  const auto& wv = t.val(w);
  if (xv.rank() != 2 || wv.rank() != 3) throw ShapeMismatch("conv1d_same: ranks");
  const Index L = xv.dim(0), cin = xv.dim(1);
  const Index k = wv.dim(0), cout = wv.dim(2);
  if (wv.dim(1) != cin || t.val(b).size() != cout)
    throw ShapeMismatch("conv1d_same: channel mismatch");
  const Index pad = (k - 1) / 2;
  Tensor<S> out({L, cout});
  for (Index p = 0; p < L; ++p)
    for (Index co = 0; co < cout; ++co) {
      S acc = t.val(b)[co];
      for (Index j = 0; j < k; ++j) {
        const Index src = p + j - pad;
        if (src < 0 || src >= L) continue;
        for (Index ci = 0; ci < cin; ++ci) acc += xv.at(src, ci) * wv.at(j, ci, co);
      }
      out.at(p, co) = acc;
    }
  const bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var o{t.next_index()};
  return t.push(std::move(out), ng, [&t, x, w, b, o, L, cin, k, cout, pad] {
    const auto& go = t.grad(o);
    for (Index p = 0; p < L; ++p)
      for (Index co = 0; co < cout; ++co) {
        const S g = go.at(p, co);
        if (t.needs_grad(b)) t.grad(b)[co] += g;
        for (Index j = 0; j < k; ++j) {
          const Index src = p + j - pad;
          if (src < 0 || src >= L) continue;
          for (Index ci = 0; ci < cin; ++ci) {
            if (t.needs_grad(w)) t.grad(w).at(j, ci, co) += g * t.val(x).at(src, ci);
            if (t.needs_grad(x)) t.grad(x).at(src, ci) += g * t.val(w).at(j, ci, co);
          }
        }
      }
  });
}

// Max over the first axis: [L, C] -> [C]. Ties resolve to the first row.
template <typename S>
Var max_over_time(Tape<S>& t, Var x) {
  const auto& xv = t.val(x);
  if (xv.rank() != 2) throw ShapeMismatch("max_over_time: rank-2 required");
  const Index L = xv.dim(0), C = xv.dim(1);
  Tensor<S> out({C});
  std::vector<Index> arg(size_t(C), 0);
  for (Index c = 0; c < C; ++c) {
    S best = xv.at(0, c);
    for (Index r = 1; r < L; ++r)
      if (xv.at(r, c) > best) {
        best = xv.at(r, c);
        arg[size_t(c)] = r;
      }
    out[c] = best;
  }
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o, C, arg = std::move(arg)] {
    if (!t.needs_grad(x)) return;
    for (Index c = 0; c < C; ++c) t.grad(x).at(arg[size_t(c)], c) += t.grad(o)[c];
  });
}

// ------------------------------------------------------------------ dropout

// Inverted dropout; identity when train is false or rate is zero.
template <typename S>
Var dropout(Tape<S>& t, Var x, S rate, Rng& rng, bool train) {
  if (!train || rate <= S(0)) return x;
  const auto& xv = t.val(x);
  Tensor<S> mask(xv.shape());
  const S keep_scale = S(1) / (S(1) - rate);
  for (Index i = 0; i < mask.size(); ++i)
    mask[i] = rng.bernoulli(double(rate)) ? S(0) : keep_scale;
  Tensor<S> out(xv.shape());
  out.vec() = xv.vec().cwiseProduct(mask.vec());
  Var o{t.next_index()};
  return t.push(std::move(out), t.needs_grad(x), [&t, x, o, mask = std::move(mask)] {
    if (t.needs_grad(x)) t.grad(x).vec() += t.grad(o).vec().cwiseProduct(mask.vec());
  });
}

// ------------------------------------------------------- attention and PEs

// Sinusoidal positional encodings for positions [0, length).
template <typename S>
Tensor<S> sinusoidal_encoding(Index length, Index dim) {
  Tensor<S> pe({length, dim});
  for (Index p = 0; p < length; ++p)
    for (Index i = 0; i < dim; ++i) {
      const double angle = double(p) / std::pow(10000.0, double(2 * (i / 2)) / double(dim));
      pe.at(p, i) = S(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

// Additive mask: 0 where allowed, -1e9 where not. allow(q, k) decides.
template <typename S, typename Allow>
Tensor<S> additive_mask(Index rows, Index cols, Allow allow) {
  Tensor<S> m({rows, cols});
  for (Index q = 0; q < rows; ++q)
    for (Index k = 0; k < cols; ++k) m.at(q, k) = allow(q, k) ? S(0) : S(-1e9);
  return m;
}

template <typename S>
Tensor<S> causal_mask(Index n, bool forward) {
  return additive_mask<S>(n, n, [forward](Index q, Index k) {
    return forward ? k <= q : k >= q;
  });
}

// Scaled dot-product attention with an additive mask, composed from the
// primitives above (so its gradient needs no dedicated backward).
template <typename S>
Var attention(Tape<S>& t, Var q, Var k, Var v, Var additive) {
  const Index dk = t.val(k).dim(1);
  Var scores = scale(t, matmul(t, q, k, false, true), S(1) / std::sqrt(S(dk)));
  Var masked = add(t, scores, additive);
  Var probs = softmax(t, masked);
  return matmul(t, probs, v);
}

// x @ W + b convenience.
template <typename S>
Var affine(Tape<S>& t, Var x, Var W, Var b) {
  return add_rowvec(t, matmul(t, x, W), b);
}

}  // namespace msync
