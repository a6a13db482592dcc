// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

template <typename S>
using Array = typename Tensor<S>::Array;
template <typename S>
using Node = typename Tensor<S>::Node;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRow = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMapRow = Eigen::Map<const RowMat<S>>;

/// Wraps `value` as the output of an op over `inputs`, recording the graph
/// edge only when some input is tracked and recording is enabled.
template <typename S>
Tensor<S> record(Shape shape, Array<S> value, std::initializer_list<Tensor<S>> inputs,
                 std::function<void(Node<S>&)> backward) {
  Tensor<S> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool tracked = false;
  for (const auto& t : inputs) tracked = tracked || (t.defined() && t.requires_grad());
  if (!tracked) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& t : inputs) node.parents.push_back(t.defined() ? t.node() : nullptr);
  node.backward = std::move(backward);
  return out;
}

template <typename S>
bool wants(const std::shared_ptr<Node<S>>& n) {
  return n && n->requires_grad;
}

Index normalize_axis(Index axis, Index rank, const Shape& shape) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape));
  }
  return a;
}

Shape strip_leading_ones(const Shape& s) {
  auto it = std::find_if(s.begin(), s.end(), [](Index d) { return d != 1; });
  return Shape(it, s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  const Shape s = strip_leading_ones(small);
  if (s.size() > big.size()) return false;
  return std::equal(s.begin(), s.end(), big.end() - static_cast<std::ptrdiff_t>(s.size()));
}

std::vector<Index> broadcast_strides(const Shape& out, const Shape& s) {
  std::vector<Index> strides(out.size(), 0);
  Index stride = 1;
  const std::size_t offset = out.size() - s.size();
  for (std::size_t k = s.size(); k-- > 0;) {
    strides[offset + k] = s[k] == 1 ? 0 : stride;
    stride *= s[k];
  }
  return strides;
}

/// Source offset of every element of `out` under strides `strides`.
std::vector<Index> gather_offsets(const Shape& out, const std::vector<Index>& strides) {
  const Index n = shape_size(out);
  std::vector<Index> offsets(static_cast<std::size_t>(n));
  std::vector<Index> counter(out.size(), 0);
  Index pos = 0;
  for (Index i = 0; i < n; ++i) {
    offsets[static_cast<std::size_t>(i)] = pos;
    for (std::size_t k = out.size(); k-- > 0;) {
      ++counter[k];
      pos += strides[k];
      if (counter[k] < out[k]) break;
      pos -= strides[k] * counter[k];
      counter[k] = 0;
    }
  }
  return offsets;
}

/// How one operand of a broadcasting op maps onto the output.
template <typename S>
struct Spread {
  enum class Kind { kSame, kSuffix, kGeneral } kind = Kind::kSame;
  Index source_size = 0;
  std::vector<Index> offsets;

  Spread(const Shape& operand, const Shape& out) : source_size(shape_size(operand)) {
    if (operand == out) {
      kind = Kind::kSame;
    } else if (is_suffix(operand, out)) {
      kind = Kind::kSuffix;
    } else {
      kind = Kind::kGeneral;
      offsets = gather_offsets(out, broadcast_strides(out, operand));
    }
  }

  Array<S> expand(const Array<S>& src, Index out_size) const {
    switch (kind) {
      case Kind::kSame:
        return src;
      case Kind::kSuffix:
        return src.replicate(out_size / std::max<Index>(source_size, 1), 1);
      default: {
        Array<S> r(out_size);
        for (Index i = 0; i < out_size; ++i) r[i] = src[offsets[static_cast<std::size_t>(i)]];
        return r;
      }
    }
  }

  Array<S> reduce(const Array<S>& g) const {
    switch (kind) {
      case Kind::kSame:
        return g;
      case Kind::kSuffix: {
        const Index blocks = g.size() / std::max<Index>(source_size, 1);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> m(g.data(), source_size,
                                                                             blocks);
        return m.rowwise().sum().array();
      }
      default: {
        Array<S> r = Array<S>::Zero(source_size);
        for (Index i = 0; i < g.size(); ++i) r[offsets[static_cast<std::size_t>(i)]] += g[i];
        return r;
      }
    }
  }
};

}  // namespace

AttentionMask causal_mask(Index rows, Index cols) {
  AttentionMask m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = i + 1; j < cols; ++j) m.set_blocked(i, j);
  return m;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const Index da = k + a.size() >= r ? a[k + a.size() - r] : 1;
    const Index db = k + b.size() >= r ? b[k + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_string(a) + " and " +
                           shape_string(b));
    }
    out[k] = da == 1 ? db : da;
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  const Index n = shape_size(out);
  Spread<S> sa(a.shape(), out), sb(b.shape(), out);
  Array<S> v = sa.expand(a.value(), n) + sb.expand(b.value(), n);
  return record<S>(std::move(out), std::move(v), {a, b}, [sa, sb](Node<S>& self) {
    if (wants<S>(self.parents[0])) self.parents[0]->accumulate(sa.reduce(self.grad));
    if (wants<S>(self.parents[1])) self.parents[1]->accumulate(sb.reduce(self.grad));
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  const Index n = shape_size(out);
  Spread<S> sa(a.shape(), out), sb(b.shape(), out);
  Array<S> v = sa.expand(a.value(), n) - sb.expand(b.value(), n);
  return record<S>(std::move(out), std::move(v), {a, b}, [sa, sb](Node<S>& self) {
    if (wants<S>(self.parents[0])) self.parents[0]->accumulate(sa.reduce(self.grad));
    if (wants<S>(self.parents[1])) self.parents[1]->accumulate(sb.reduce(-self.grad));
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  const Index n = shape_size(out);
  Spread<S> sa(a.shape(), out), sb(b.shape(), out);
  Array<S> ea = sa.expand(a.value(), n);
  Array<S> eb = sb.expand(b.value(), n);
  Array<S> v = ea * eb;
  return record<S>(std::move(out), std::move(v), {a, b}, [sa, sb, ea, eb](Node<S>& self) {
    if (wants<S>(self.parents[0])) self.parents[0]->accumulate(sa.reduce(self.grad * eb));
    if (wants<S>(self.parents[1])) self.parents[1]->accumulate(sb.reduce(self.grad * ea));
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return record<S>(x.shape(), x.value() * factor, {x}, [factor](Node<S>& self) {
    self.parents[0]->accumulate(self.grad * factor);
  });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S offset) {
  return record<S>(x.shape(), x.value() + offset, {x},
                   [](Node<S>& self) { self.parents[0]->accumulate(self.grad); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Array<S> v = x.value().max(S(0));
  return record<S>(x.shape(), v, {x}, [](Node<S>& self) {
    self.parents[0]->accumulate((self.value > S(0)).select(self.grad, S(0)));
  });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Array<S> v = (S(1) + (-x.value()).exp()).inverse();
  return record<S>(x.shape(), v, {x}, [](Node<S>& self) {
    self.parents[0]->accumulate(self.grad * self.value * (S(1) - self.value));
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  const Index n = x.size();
  return record<S>(Shape{}, Array<S>::Constant(1, x.value().sum()), {x}, [n](Node<S>& self) {
    self.parents[0]->accumulate(Array<S>::Constant(n, self.grad[0]));
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  const Index n = x.size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), S(1) / static_cast<S>(n));
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const Index m = a.dim(-2), k = a.dim(-1), kb = b.dim(-2), n = b.dim(-1);
  if (k != kb) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);

  if (shape_size(batch_b) == 1 && batch_b.size() <= batch_a.size()) {
    // Shared right operand: one GEMM over all rows of `a`.
    const Index rows = a.size() / std::max<Index>(k, 1);
    Shape out = batch_a;
    out.push_back(m);
    out.push_back(n);
    Array<S> v(rows * n);
    MapRow<S>(v.data(), rows, n).noalias() =
        ConstMapRow<S>(a.value().data(), rows, k) * ConstMapRow<S>(b.value().data(), k, n);
    return record<S>(std::move(out), std::move(v), {a, b}, [rows, k, n](Node<S>& self) {
      ConstMapRow<S> g(self.grad.data(), rows, n);
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      if (wants<S>(pa)) {
        Array<S> ga(rows * k);
        MapRow<S>(ga.data(), rows, k).noalias() =
            g * ConstMapRow<S>(pb->value.data(), k, n).transpose();
        pa->accumulate(ga);
      }
      if (wants<S>(pb)) {
        Array<S> gb(k * n);
        MapRow<S>(gb.data(), k, n).noalias() =
            ConstMapRow<S>(pa->value.data(), rows, k).transpose() * g;
        pb->accumulate(gb);
      }
    });
  }

  const Shape batch = broadcast_shapes(batch_a, batch_b);
  const auto off_a = gather_offsets(batch, broadcast_strides(batch, batch_a));
  const auto off_b = gather_offsets(batch, broadcast_strides(batch, batch_b));
  const Index count = shape_size(batch);
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);
  Array<S> v(count * m * n);
  for (Index i = 0; i < count; ++i) {
    const auto ia = off_a[static_cast<std::size_t>(i)];
    const auto ib = off_b[static_cast<std::size_t>(i)];
    MapRow<S>(v.data() + i * m * n, m, n).noalias() =
        ConstMapRow<S>(a.value().data() + ia * m * k, m, k) *
        ConstMapRow<S>(b.value().data() + ib * k * n, k, n);
  }
  return record<S>(std::move(out), std::move(v), {a, b},
                   [off_a, off_b, count, m, k, n](Node<S>& self) {
                     const auto& pa = self.parents[0];
                     const auto& pb = self.parents[1];
                     Array<S> ga, gb;
                     if (wants<S>(pa)) ga = Array<S>::Zero(pa->value.size());
                     if (wants<S>(pb)) gb = Array<S>::Zero(pb->value.size());
                     for (Index i = 0; i < count; ++i) {
                       const auto ia = off_a[static_cast<std::size_t>(i)];
                       const auto ib = off_b[static_cast<std::size_t>(i)];
                       ConstMapRow<S> g(self.grad.data() + i * m * n, m, n);
                       if (ga.size()) {
                         MapRow<S>(ga.data() + ia * m * k, m, k).noalias() +=
                             g * ConstMapRow<S>(pb->value.data() + ib * k * n, k, n).transpose();
                       }
                       if (gb.size()) {
                         MapRow<S>(gb.data() + ib * k * n, k, n).noalias() +=
                             ConstMapRow<S>(pa->value.data() + ia * m * k, m, k).transpose() * g;
                       }
                     }
                     if (ga.size()) pa->accumulate(ga);
                     if (gb.size()) pb->accumulate(gb);
                   });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape with more than one -1");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.size() / known;
  if (shape_size(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_string(x.shape()) + " to " +
                         shape_string(shape));
  }
  return record<S>(std::move(shape), x.value(), {x},
                   [](Node<S>& self) { self.parents[0]->accumulate(self.grad); });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<Index>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.size()) {
    throw DimensionError("permute order has " + std::to_string(order.size()) +
                         " axes for shape " + shape_string(in));
  }
  std::vector<Index> in_strides(in.size(), 1);
  for (std::size_t k = in.size(); k-- > 1;) in_strides[k - 1] = in_strides[k] * in[k];
  Shape out(in.size());
  std::vector<Index> strides(in.size());
  std::vector<bool> seen(in.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto src = static_cast<std::size_t>(order[i]);
    if (order[i] < 0 || src >= in.size() || seen[src]) {
      throw DimensionError("invalid permutation for shape " + shape_string(in));
    }
    seen[src] = true;
    out[i] = in[src];
    strides[i] = in_strides[src];
  }
  auto offsets = gather_offsets(out, strides);
  Array<S> v(x.size());
  for (Index i = 0; i < v.size(); ++i) v[i] = x.value()[offsets[static_cast<std::size_t>(i)]];
  return record<S>(std::move(out), std::move(v), {x},
                   [offsets = std::move(offsets)](Node<S>& self) {
                     Array<S> g(self.grad.size());
                     for (Index i = 0; i < g.size(); ++i)
                       g[offsets[static_cast<std::size_t>(i)]] = self.grad[i];
                     self.parents[0]->accumulate(g);
                   });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  std::vector<Index> order(static_cast<std::size_t>(x.rank()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  if (order.size() < 2) throw DimensionError("transpose needs rank >= 2");
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

template <typename S>
Tensor<S> narrow(const Tensor<S>& x, Index axis, Index start, Index length) {
  const Index a = normalize_axis(axis, x.rank(), x.shape());
  const Shape& in = x.shape();
  const Index extent = in[static_cast<std::size_t>(a)];
  if (start < 0 || length < 0 || start + length > extent) {
    throw DimensionError("narrow [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of extent " +
                         std::to_string(extent));
  }
  Index outer = 1, inner = 1;
  for (Index i = 0; i < a; ++i) outer *= in[static_cast<std::size_t>(i)];
  for (Index i = a + 1; i < x.rank(); ++i) inner *= in[static_cast<std::size_t>(i)];
  Shape out = in;
  out[static_cast<std::size_t>(a)] = length;
  Array<S> v(outer * length * inner);
  for (Index o = 0; o < outer; ++o)
    v.segment(o * length * inner, length * inner) =
        x.value().segment((o * extent + start) * inner, length * inner);
  return record<S>(std::move(out), std::move(v), {x},
                   [outer, extent, start, length, inner](Node<S>& self) {
                     Array<S> g = Array<S>::Zero(outer * extent * inner);
                     for (Index o = 0; o < outer; ++o)
                       g.segment((o * extent + start) * inner, length * inner) =
                           self.grad.segment(o * length * inner, length * inner);
                     self.parents[0]->accumulate(g);
                   });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const Shape& first = parts.front().shape();
  const Index a = normalize_axis(axis, static_cast<Index>(first.size()), first);
  Index outer = 1, inner = 1;
  for (Index i = 0; i < a; ++i) outer *= first[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(a) + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<Index> extents;
  Index total = 0;
  for (const auto& p : parts) {
    Shape expect = first;
    expect[static_cast<std::size_t>(a)] = p.shape().size() == first.size()
                                              ? p.shape()[static_cast<std::size_t>(a)]
                                              : -1;
    if (p.shape() != expect) {
      throw DimensionError("concat shapes disagree: " + shape_string(first) + " vs " +
                           shape_string(p.shape()));
    }
    extents.push_back(p.shape()[static_cast<std::size_t>(a)]);
    total += extents.back();
  }
  Shape out = first;
  out[static_cast<std::size_t>(a)] = total;
  Array<S> v(outer * total * inner);
  Index offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Index chunk = extents[p] * inner;
    for (Index o = 0; o < outer; ++o)
      v.segment(o * total * inner + offset, chunk) = parts[p].value().segment(o * chunk, chunk);
    offset += chunk;
  }
  Tensor<S> result(std::move(out), std::move(v));
  if (!grad_enabled()) return result;
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.requires_grad();
  if (!tracked) return result;
  auto& node = *result.node();
  node.requires_grad = true;
  for (const auto& p : parts) node.parents.push_back(p.node());
  node.backward = [extents, outer, total, inner](Node<S>& self) {
    Index off = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const Index chunk = extents[p] * inner;
      if (wants<S>(self.parents[p])) {
        Array<S> g(outer * chunk);
        for (Index o = 0; o < outer; ++o)
          g.segment(o * chunk, chunk) = self.grad.segment(o * total * inner + off, chunk);
        self.parents[p]->accumulate(g);
      }
      off += chunk;
    }
  };
  return result;
}

template <typename S>
Tensor<S> expand_batch(const Tensor<S>& x, Index count) {
  if (x.rank() < 1 || x.dim(0) != 1) {
    throw DimensionError("expand_batch needs a leading axis of 1, got " +
                         shape_string(x.shape()));
  }
  Shape out = x.shape();
  out[0] = count;
  const Index block = x.size();
  Array<S> v = x.value().replicate(count, 1);
  return record<S>(std::move(out), std::move(v), {x}, [block, count](Node<S>& self) {
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> m(self.grad.data(), block,
                                                                         count);
    self.parents[0]->accumulate(m.rowwise().sum().array());
  });
}

namespace {

template <typename S>
void softmax_rows(const S* in, S* out, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const S* x = in + r * cols;
    S* y = out + r * cols;
    const S peak = *std::max_element(x, x + cols);
    S total = 0;
    for (Index c = 0; c < cols; ++c) total += (y[c] = std::exp(x[c] - peak));
    for (Index c = 0; c < cols; ++c) y[c] /= total;
  }
}

template <typename S>
std::function<void(Node<S>&)> softmax_backward(Index rows, Index cols) {
  return [rows, cols](Node<S>& self) {
    Array<S> g(self.grad.size());
    for (Index r = 0; r < rows; ++r) {
      auto y = self.value.segment(r * cols, cols);
      auto gy = self.grad.segment(r * cols, cols);
      const S dot = (y * gy).sum();
      g.segment(r * cols, cols) = y * (gy - dot);
    }
    self.parents[0]->accumulate(g);
  };
}

}  // namespace

template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
  if (x.rank() < 1 || x.dim(-1) < 1) {
    throw DimensionError("softmax over an empty last dimension, shape " +
                         shape_string(x.shape()));
  }
  const Index cols = x.dim(-1);
  const Index rows = x.size() / cols;
  Array<S> v(x.size());
  softmax_rows(x.value().data(), v.data(), rows, cols);
  return record<S>(x.shape(), std::move(v), {x}, softmax_backward<S>(rows, cols));
}

template <typename S>
Tensor<S> log_softmax_lastdim(const Tensor<S>& x) {
  if (x.rank() < 1 || x.dim(-1) < 1) {
    throw DimensionError("log_softmax over an empty last dimension, shape " +
                         shape_string(x.shape()));
  }
  const Index cols = x.dim(-1);
  const Index rows = x.size() / cols;
  Array<S> v(x.size());
  for (Index r = 0; r < rows; ++r) {
    auto xr = x.value().segment(r * cols, cols);
    const S peak = xr.maxCoeff();
    const S lse = peak + std::log((xr - peak).exp().sum());
    v.segment(r * cols, cols) = xr - lse;
  }
  return record<S>(x.shape(), std::move(v), {x}, [rows, cols](Node<S>& self) {
    Array<S> g(self.grad.size());
    for (Index r = 0; r < rows; ++r) {
      auto gy = self.grad.segment(r * cols, cols);
      g.segment(r * cols, cols) = gy - self.value.segment(r * cols, cols).exp() * gy.sum();
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename S>
Tensor<S> masked_softmax(const Tensor<S>& x, const AttentionMask& mask) {
  if (x.rank() < 2 || x.dim(-2) != mask.rows() || x.dim(-1) != mask.cols()) {
    throw DimensionError("mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " does not fit scores " +
                         shape_string(x.shape()));
  }
  const Index lq = mask.rows(), lk = mask.cols();
  const Index rows = x.size() / std::max<Index>(lk, 1);
  Array<S> shifted = x.value();
  std::vector<bool> dead(static_cast<std::size_t>(lq), false);
  for (Index i = 0; i < lq; ++i) {
    bool all = true;
    for (Index j = 0; j < lk; ++j) all = all && mask.blocked(i, j);
    dead[static_cast<std::size_t>(i)] = all;
  }
  for (Index r = 0; r < rows; ++r) {
    const Index i = r % lq;
    for (Index j = 0; j < lk; ++j)
      if (mask.blocked(i, j)) shifted[r * lk + j] += static_cast<S>(kMaskedLogit);
  }
  Array<S> v(x.size());
  softmax_rows(shifted.data(), v.data(), rows, lk);
  for (Index r = 0; r < rows; ++r)
    if (dead[static_cast<std::size_t>(r % lq)]) v.segment(r * lk, lk).setZero();
  return record<S>(x.shape(), std::move(v), {x}, softmax_backward<S>(rows, lk));
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S epsilon) {
  const Index cols = x.dim(-1);
  if (gamma.size() != cols || beta.size() != cols) {
    throw DimensionError("layer_norm affine of size " + std::to_string(gamma.size()) +
                         " for last dimension " + std::to_string(cols));
  }
  const Index rows = x.size() / std::max<Index>(cols, 1);
  Array<S> normed(x.size());
  Array<S> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    auto xr = x.value().segment(r * cols, cols);
    const S mu = xr.mean();
    const S var = (xr - mu).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + epsilon);
    normed.segment(r * cols, cols) = (xr - mu) * inv_std[r];
  }
  Array<S> v(x.size());
  for (Index r = 0; r < rows; ++r)
    v.segment(r * cols, cols) = normed.segment(r * cols, cols) * gamma.value() + beta.value();
  return record<S>(x.shape(), std::move(v), {x, gamma, beta},
                   [rows, cols, normed, inv_std](Node<S>& self) {
                     const auto& px = self.parents[0];
                     const auto& pg = self.parents[1];
                     const auto& pb = self.parents[2];
                     Array<S> gx, gg, gb;
                     if (wants<S>(px)) gx.resize(self.grad.size());
                     if (wants<S>(pg)) gg = Array<S>::Zero(cols);
                     if (wants<S>(pb)) gb = Array<S>::Zero(cols);
                     for (Index r = 0; r < rows; ++r) {
                       auto g = self.grad.segment(r * cols, cols);
                       auto xh = normed.segment(r * cols, cols);
                       if (gg.size()) gg += g * xh;
                       if (gb.size()) gb += g;
                       if (gx.size()) {
                         const Array<S> dxh = g * pg->value;
                         gx.segment(r * cols, cols) =
                             inv_std[r] * (dxh - dxh.mean() - xh * (dxh * xh).mean());
                       }
                     }
                     if (gx.size()) px->accumulate(gx);
                     if (gg.size()) pg->accumulate(gg);
                     if (gb.size()) pb->accumulate(gb);
                   });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.rank() != 2) {
    throw DimensionError("linear weight must be [in, out], got " + shape_string(weight.shape()));
  }
  Tensor<S> y = matmul(x, weight);
  if (!bias.defined()) return y;
  if (bias.size() != weight.dim(1)) {
    throw DimensionError("linear bias " + shape_string(bias.shape()) + " for weight " +
                         shape_string(weight.shape()));
  }
  return add(y, bias);
}

template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const int> ids,
                           const Shape& ids_shape) {
  if (table.rank() != 2) {
    throw DimensionError("embedding table must be [V, E], got " + shape_string(table.shape()));
  }
  if (shape_size(ids_shape) != static_cast<Index>(ids.size())) {
    throw DimensionError("ids shape " + shape_string(ids_shape) + " does not hold " +
                         std::to_string(ids.size()) + " ids");
  }
  const Index vocab = table.dim(0), width = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  for (int id : rows) {
    if (id < 0 || id >= vocab) {
      throw RangeError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  Shape out = ids_shape;
  out.push_back(width);
  Array<S> v(static_cast<Index>(rows.size()) * width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    v.segment(static_cast<Index>(i) * width, width) = table.value().segment(rows[i] * width, width);
  return record<S>(std::move(out), std::move(v), {table},
                   [rows = std::move(rows), vocab, width](Node<S>& self) {
                     Array<S> g = Array<S>::Zero(vocab * width);
                     for (std::size_t i = 0; i < rows.size(); ++i)
                       g.segment(rows[i] * width, width) +=
                           self.grad.segment(static_cast<Index>(i) * width, width);
                     self.parents[0]->accumulate(g);
                   });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets, int ignore_id) {
  const Index classes = logits.dim(-1);
  const Index rows = logits.size() / std::max<Index>(classes, 1);
  if (static_cast<Index>(targets.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows of " + shape_string(logits.shape()));
  }
  Array<S> probs(logits.size());
  softmax_rows(logits.value().data(), probs.data(), rows, classes);
  S total = 0;
  Index counted = 0;
  for (Index r = 0; r < rows; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_id) continue;
    if (t < 0 || t >= classes) {
      throw RangeError("target id " + std::to_string(t) + " outside " + std::to_string(classes) +
                       " classes");
    }
    auto xr = logits.value().segment(r * classes, classes);
    const S peak = xr.maxCoeff();
    const S lse = peak + std::log((xr - peak).exp().sum());
    total += lse - xr[t];
    ++counted;
  }
  const S loss = counted ? total / static_cast<S>(counted) : S(0);
  std::vector<int> kept(targets.begin(), targets.end());
  return record<S>(Shape{}, Array<S>::Constant(1, loss), {logits},
                   [probs, kept = std::move(kept), rows, classes, counted,
                    ignore_id](Node<S>& self) {
                     Array<S> g = Array<S>::Zero(rows * classes);
                     if (counted) {
                       const S w = self.grad[0] / static_cast<S>(counted);
                       for (Index r = 0; r < rows; ++r) {
                         const int t = kept[static_cast<std::size_t>(r)];
                         if (t == ignore_id) continue;
                         g.segment(r * classes, classes) = probs.segment(r * classes, classes) * w;
                         g[r * classes + t] -= w;
                       }
                     }
                     self.parents[0]->accumulate(g);
                   });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Index stride,
                 Index padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) ||
      weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d input " + shape_string(x.shape()) + " with kernel " +
                         shape_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw ConfigError("conv2d stride must be >= 1");
  const Index batch = x.dim(0), chans = x.dim(1), height = x.dim(2), width = x.dim(3);
  const Index outs = weight.dim(0), ksize = weight.dim(2);
  const Index oh = (height + 2 * padding - ksize) / stride + 1;
  const Index ow = (width + 2 * padding - ksize) / stride + 1;
  if (oh < 1 || ow < 1) throw DimensionError("conv2d output would be empty");
  if (bias.defined() && bias.size() != outs) throw DimensionError("conv2d bias size mismatch");
  const Index patch = chans * ksize * ksize;
  const Index spots = oh * ow;

  // cols[n] is patch x spots; entries that fall in the padding stay zero.
  RowMat<S> cols = RowMat<S>::Zero(batch * patch, spots);
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < chans; ++c)
      for (Index ky = 0; ky < ksize; ++ky)
        for (Index kx = 0; kx < ksize; ++kx) {
          const Index row = n * patch + (c * ksize + ky) * ksize + kx;
          for (Index y = 0; y < oh; ++y) {
            const Index iy = y * stride - padding + ky;
            if (iy < 0 || iy >= height) continue;
            for (Index xo = 0; xo < ow; ++xo) {
              const Index ix = xo * stride - padding + kx;
              if (ix < 0 || ix >= width) continue;
              cols(row, y * ow + xo) = x.value()[((n * chans + c) * height + iy) * width + ix];
            }
          }
        }

  Array<S> v(batch * outs * spots);
  ConstMapRow<S> w(weight.value().data(), outs, patch);
  for (Index n = 0; n < batch; ++n) {
    MapRow<S> o(v.data() + n * outs * spots, outs, spots);
    o.noalias() = w * cols.middleRows(n * patch, patch);
    if (bias.defined()) o.colwise() += bias.value().matrix();
  }
  Shape out{batch, outs, oh, ow};
  return record<S>(
      std::move(out), std::move(v), {x, weight, bias},
      [cols = std::move(cols), batch, chans, height, width, outs, ksize, oh, ow, patch, spots,
       stride, padding](Node<S>& self) {
        const auto& px = self.parents[0];
        const auto& pw = self.parents[1];
        const auto& pb = self.parents[2];
        ConstMapRow<S> w(pw->value.data(), outs, patch);
        Array<S> gw, gb, gx;
        if (wants<S>(pw)) gw = Array<S>::Zero(outs * patch);
        if (wants<S>(pb)) gb = Array<S>::Zero(outs);
        if (wants<S>(px)) gx = Array<S>::Zero(batch * chans * height * width);
        for (Index n = 0; n < batch; ++n) {
          ConstMapRow<S> g(self.grad.data() + n * outs * spots, outs, spots);
          if (gw.size())
            MapRow<S>(gw.data(), outs, patch).noalias() +=
                g * cols.middleRows(n * patch, patch).transpose();
          if (gb.size()) gb += g.rowwise().sum().array();
          if (gx.size()) {
            const RowMat<S> gcols = w.transpose() * g;
            for (Index c = 0; c < chans; ++c)
              for (Index ky = 0; ky < ksize; ++ky)
                for (Index kx = 0; kx < ksize; ++kx) {
                  const Index row = (c * ksize + ky) * ksize + kx;
                  for (Index y = 0; y < oh; ++y) {
                    const Index iy = y * stride - padding + ky;
                    if (iy < 0 || iy >= height) continue;
                    for (Index xo = 0; xo < ow; ++xo) {
                      const Index ix = xo * stride - padding + kx;
                      if (ix < 0 || ix >= width) continue;
                      gx[((n * chans + c) * height + iy) * width + ix] += gcols(row, y * ow + xo);
                    }
                  }
                }
          }
        }
        if (gx.size()) px->accumulate(gx);
        if (gw.size()) pw->accumulate(gw);
        if (gb.size()) pb->accumulate(gb);
      });
}

#define TEXTREC_INSTANTIATE_OPS(S)                                                              \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> scale(const Tensor<S>&, S);                                                 \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                            \
  template Tensor<S> relu(const Tensor<S>&);                                                     \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                  \
  template Tensor<S> sum(const Tensor<S>&);                                                      \
  template Tensor<S> mean(const Tensor<S>&);                                                     \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                           \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<Index>&);                        \
  template Tensor<S> transpose(const Tensor<S>&);                                                \
  template Tensor<S> narrow(const Tensor<S>&, Index, Index, Index);                              \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, Index);                               \
  template Tensor<S> expand_batch(const Tensor<S>&, Index);                                      \
  template Tensor<S> softmax_lastdim(const Tensor<S>&);                                          \
  template Tensor<S> log_softmax_lastdim(const Tensor<S>&);                                      \
  template Tensor<S> masked_softmax(const Tensor<S>&, const AttentionMask&);                     \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);        \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> embedding_lookup(const Tensor<S>&, std::span<const int>, const Shape&);      \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>, int);                 \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index);

TEXTREC_INSTANTIATE_OPS(float)
TEXTREC_INSTANTIATE_OPS(double)

}  // namespace textrec
