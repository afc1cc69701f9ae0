#include "forgeloc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "blas.hpp"
#include "forgeloc/errors.hpp"
#include "forgeloc/random.hpp"

namespace forgeloc {

namespace {

template <class T>
using Node = detail::Node<T>;

// Input node accessor for backward closures; nullptr when no grad is needed.
template <class T>
Node<T>* grad_target(Node<T>& out, size_t i) {
  if (i >= out.inputs.size() || !out.inputs[i]) return nullptr;
  Node<T>* n = out.inputs[i].get();
  return n->requires_grad ? n : nullptr;
}

bool is_suffix(const Shape& shorter, const Shape& longer) {
  if (shorter.size() > longer.size()) return false;
  return std::equal(shorter.rbegin(), shorter.rend(), longer.rbegin());
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  const bool a_long = a.ndim() >= b.ndim();
  const Shape& longer = a_long ? a.shape() : b.shape();
  const Shape& shorter = a_long ? b.shape() : a.shape();
  if (!is_suffix(shorter, longer)) {
    throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcast-compatible");
  }
  const size_t n = static_cast<size_t>(shape_numel(longer));
  const size_t na = static_cast<size_t>(a.numel());
  const size_t nb = static_cast<size_t>(b.numel());
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(n);
  switch (kind) {
    case BinaryKind::kAdd:
      for (size_t i = 0; i < n; ++i) out[i] = ad[i % na] + bd[i % nb];
      break;
    case BinaryKind::kSub:
      for (size_t i = 0; i < n; ++i) out[i] = ad[i % na] - bd[i % nb];
      break;
    case BinaryKind::kMul:
      for (size_t i = 0; i < n; ++i) out[i] = ad[i % na] * bd[i % nb];
      break;
    case BinaryKind::kDiv:
      for (size_t i = 0; i < n; ++i) out[i] = ad[i % na] / bd[i % nb];
      break;
  }
  return Tensor<T>::make_result(longer, std::move(out), {a, b}, [kind, n, na, nb](Node<T>& o) {
    const auto& g = o.grad;
    const auto& ad = o.inputs[0]->data;
    const auto& bd = o.inputs[1]->data;
    if (auto* ta = grad_target(o, 0)) {
      auto& ga = ta->ensure_grad();
      if (kind == BinaryKind::kMul) {
        for (size_t i = 0; i < n; ++i) ga[i % na] += g[i] * bd[i % nb];
      } else if (kind == BinaryKind::kDiv) {
        for (size_t i = 0; i < n; ++i) ga[i % na] += g[i] / bd[i % nb];
      } else {
        for (size_t i = 0; i < n; ++i) ga[i % na] += g[i];
      }
    }
    if (auto* tb = grad_target(o, 1)) {
      auto& gb = tb->ensure_grad();
      if (kind == BinaryKind::kMul) {
        for (size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * ad[i % na];
      } else if (kind == BinaryKind::kDiv) {
        for (size_t i = 0; i < n; ++i) {
          const T bv = bd[i % nb];
          gb[i % nb] -= g[i] * ad[i % na] / (bv * bv);
        }
      } else if (kind == BinaryKind::kSub) {
        for (size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
      } else {
        for (size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
      }
    }
  });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [dfdx](Node<T>& o) {
    auto* t = grad_target(o, 0);
    if (!t) return;
    auto& g = t->ensure_grad();
    const auto& xd = t->data;
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dfdx(xd[i], o.data[i]);
  });
}

int64_t norm_axis(int64_t axis, int64_t ndim, const char* name) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) {
    throw DimensionError(std::string(name) + ": axis out of range for rank " +
                         std::to_string(ndim));
  }
  return axis;
}

// Splits a shape around an axis into (outer, axis length, inner) extents.
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, int64_t axis) {
  AxisSplit r;
  for (int64_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kDiv, "div");
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}
template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}
template <class T>
Tensor<T> rsub_scalar(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return s - v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return !(v <= T(0)) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  return unary(x, [lo, hi](T v) { return std::isnan(v) ? v : std::min(hi, std::max(lo, v)); },
               [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T e) {
  return unary(x, [e](T v) { return std::pow(v, e); },
               [e](T v, T) { return e == T(0) ? T(0) : e * std::pow(v, e - T(1)); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  auto xd = x.data();
  T acc = std::accumulate(xd.begin(), xd.end(), T(0));
  return Tensor<T>::make_result(Shape{}, {acc}, {x}, [](Node<T>& o) {
    auto* t = grad_target(o, 0);
    if (!t) return;
    auto& g = t->ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, int64_t axis, bool keepdim) {
  axis = norm_axis(axis, x.ndim(), "sum_axis");
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  auto xd = x.data();
  std::vector<T> out(static_cast<size_t>(s.outer * s.inner), T(0));
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t a = 0; a < s.len; ++a)
      for (int64_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xd[(o * s.len + a) * s.inner + i];
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x}, [s](Node<T>& n) {
    auto* t = grad_target(n, 0);
    if (!t) return;
    auto& g = t->ensure_grad();
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t a = 0; a < s.len; ++a)
        for (int64_t i = 0; i < s.inner; ++i)
          g[(o * s.len + a) * s.inner + i] += n.grad[o * s.inner + i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one -1 in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw DimensionError("reshape: cannot infer dimension for " + shape_str(x.shape()) +
                           " -> " + shape_str(shape));
    }
    shape[infer] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto xd = x.data();
  return Tensor<T>::make_result(std::move(shape), std::vector<T>(xd.begin(), xd.end()), {x},
                                [](Node<T>& o) {
                                  auto* t = grad_target(o, 0);
                                  if (!t) return;
                                  auto& g = t->ensure_grad();
                                  for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                });
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int64_t>& perm) {
  const int64_t nd = x.ndim();
  if (static_cast<int64_t>(perm.size()) != nd) {
    throw DimensionError("permute: permutation rank mismatch for " + shape_str(x.shape()));
  }
  std::vector<bool> seen(nd, false);
  for (int64_t p : perm) {
    if (p < 0 || p >= nd || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<int64_t> in_strides(nd, 1);
  for (int64_t i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(nd);
  std::vector<int64_t> src_strides(nd);
  for (int64_t i = 0; i < nd; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // map[i] = source offset of output element i
  const int64_t n = x.numel();
  std::vector<int64_t> map(static_cast<size_t>(n));
  std::vector<int64_t> idx(nd, 0);
  int64_t src = 0;
  for (int64_t i = 0; i < n; ++i) {
    map[i] = src;
    for (int64_t d = nd - 1; d >= 0; --d) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  auto xd = x.data();
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = xd[map[i]];
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x},
                                [map = std::move(map)](Node<T>& o) {
                                  auto* t = grad_target(o, 0);
                                  if (!t) return;
                                  auto& g = t->ensure_grad();
                                  for (size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
                                });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x, int64_t a, int64_t b) {
  a = norm_axis(a, x.ndim(), "transpose");
  b = norm_axis(b, x.ndim(), "transpose");
  std::vector<int64_t> perm(x.ndim());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a], perm[b]);
  return permute(x, perm);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int64_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  axis = norm_axis(axis, xs[0].ndim(), "concat");
  Shape out_shape = xs[0].shape();
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int64_t>(d) != axis && s[d] != out_shape[d]) {
        throw DimensionError("concat: shapes " + shape_str(xs[0].shape()) + " and " +
                             shape_str(s) + " differ off the concat axis");
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_axis(out_shape, axis);
  std::vector<int64_t> chunk;  // elements per outer index for each input
  for (const auto& x : xs) chunk.push_back(x.dim(axis) * total.inner);
  const int64_t row = total.len * total.inner;
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    auto xd = xs[k].data();
    for (int64_t o = 0; o < total.outer; ++o)
      std::copy_n(xd.begin() + o * chunk[k], chunk[k], out.begin() + o * row + offset);
    offset += chunk[k];
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), xs,
                                [chunk, row, outer = total.outer](Node<T>& o) {
                                  int64_t offset = 0;
                                  for (size_t k = 0; k < chunk.size(); ++k) {
                                    if (auto* t = grad_target(o, k)) {
                                      auto& g = t->ensure_grad();
                                      for (int64_t r = 0; r < outer; ++r)
                                        for (int64_t i = 0; i < chunk[k]; ++i)
                                          g[r * chunk[k] + i] += o.grad[r * row + offset + i];
                                    }
                                    offset += chunk[k];
                                  }
                                });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Shape ba(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  const size_t nb = std::max(ba.size(), bb.size());
  Shape batch(nb);
  for (size_t i = 0; i < nb; ++i) {
    const int64_t da = i < nb - ba.size() ? 1 : ba[i - (nb - ba.size())];
    const int64_t db = i < nb - bb.size() ? 1 : bb[i - (nb - bb.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("matmul: batch dimensions not broadcastable: " +
                           shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    batch[i] = std::max(da, db);
  }
  const int64_t nbatch = shape_numel(batch);
  // Per-output-batch offsets into a and b (in matrices).
  std::vector<int64_t> off_a(nbatch), off_b(nbatch);
  {
    std::vector<int64_t> idx(nb, 0);
    for (int64_t bi = 0; bi < nbatch; ++bi) {
      int64_t oa = 0, ob = 0;
      for (size_t i = 0; i < nb; ++i) {
        if (i >= nb - ba.size()) {
          const int64_t d = ba[i - (nb - ba.size())];
          oa = oa * d + (d == 1 ? 0 : idx[i]);
        }
        if (i >= nb - bb.size()) {
          const int64_t d = bb[i - (nb - bb.size())];
          ob = ob * d + (d == 1 ? 0 : idx[i]);
        }
      }
      off_a[bi] = oa;
      off_b[bi] = ob;
      for (int64_t d = static_cast<int64_t>(nb) - 1; d >= 0; --d) {
        if (++idx[d] < batch[d]) break;
        idx[d] = 0;
      }
    }
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(static_cast<size_t>(nbatch * m * n));
  auto ad = a.data();
  auto bd = b.data();
  for (int64_t bi = 0; bi < nbatch; ++bi) {
    detail::gemm(false, false, m, n, k, T(1), ad.data() + off_a[bi] * m * k, k,
                 bd.data() + off_b[bi] * k * n, n, T(0), out.data() + bi * m * n, n);
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [m, n, k, nbatch, off_a = std::move(off_a), off_b = std::move(off_b)](Node<T>& o) {
        const auto& ad = o.inputs[0]->data;
        const auto& bd = o.inputs[1]->data;
        auto* ta = grad_target(o, 0);
        auto* tb = grad_target(o, 1);
        T* ga = ta ? ta->ensure_grad().data() : nullptr;
        T* gb = tb ? tb->ensure_grad().data() : nullptr;
        for (int64_t bi = 0; bi < nbatch; ++bi) {
          const T* g = o.grad.data() + bi * m * n;
          if (ga) {
            detail::gemm(false, true, m, k, n, T(1), g, n, bd.data() + off_b[bi] * k * n, n,
                         T(1), ga + off_a[bi] * m * k, k);
          }
          if (gb) {
            detail::gemm(true, false, k, n, m, T(1), ad.data() + off_a[bi] * m * k, k, g, n,
                         T(1), gb + off_b[bi] * k * n, n);
          }
        }
      });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.ndim() != 2 || x.ndim() < 1 || x.dim(-1) != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const int64_t in = weight.dim(1), outf = weight.dim(0);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != outf)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " for weight " +
                         shape_str(weight.shape()));
  }
  const int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<T> out(static_cast<size_t>(rows * outf));
  detail::gemm(false, true, rows, outf, in, T(1), x.data().data(), in, weight.data().data(), in,
               T(0), out.data(), outf);
  if (bias.defined()) {
    auto bd = bias.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < outf; ++j) out[r * outf + j] += bd[j];
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), inputs, [rows, in, outf](Node<T>& o) {
        const auto& xd = o.inputs[0]->data;
        const auto& wd = o.inputs[1]->data;
        const T* g = o.grad.data();
        if (auto* tx = grad_target(o, 0)) {
          detail::gemm(false, false, rows, in, outf, T(1), g, outf, wd.data(), in, T(1),
                       tx->ensure_grad().data(), in);
        }
        if (auto* tw = grad_target(o, 1)) {
          detail::gemm(true, false, outf, in, rows, T(1), g, outf, xd.data(), in, T(1),
                       tw->ensure_grad().data(), in);
        }
        if (auto* tb = grad_target(o, 2)) {
          auto& gb = tb->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < outf; ++j) gb[j] += g[r * outf + j];
        }
      });
}

namespace {

template <class T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t oh, int64_t ow, T* cols) {
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        T* row = cols + ((ci * kh + i) * kw + j) * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t y = oy * stride - pad + i;
          if (y < 0 || y >= h) {
            std::fill_n(row + oy * ow, ow, T(0));
            continue;
          }
          const T* src = x + (ci * h + y) * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t xx = ox * stride - pad + j;
            row[oy * ow + ox] = (xx >= 0 && xx < w) ? src[xx] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* x) {
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        const T* row = cols + ((ci * kh + i) * kw + j) * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t y = oy * stride - pad + i;
          if (y < 0 || y >= h) continue;
          T* dst = x + (ci * h + y) * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t xx = ox * stride - pad + j;
            if (xx >= 0 && xx < w) dst[xx] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride, int64_t padding) {
  if (x.ndim() != 4 || weight.ndim() != 4 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1, padding >= 0");
  const int64_t bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int64_t span_h = h + 2 * padding - kh, span_w = w + 2 * padding - kw;
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
  }
  const int64_t oh = span_h / stride + 1, ow = span_w / stride + 1;
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(cout) + " output channels");
  }
  const int64_t ck = cin * kh * kw, p = oh * ow;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;
  auto xd = x.data();
  auto wd = weight.data();
  std::vector<T> cols;
  if (!pointwise) {
    cols.resize(static_cast<size_t>(bsz * ck * p));
    for (int64_t b = 0; b < bsz; ++b)
      im2col(xd.data() + b * cin * h * w, cin, h, w, kh, kw, stride, padding, oh, ow,
             cols.data() + b * ck * p);
  }
  std::vector<T> out(static_cast<size_t>(bsz * cout * p));
  for (int64_t b = 0; b < bsz; ++b) {
    const T* col = pointwise ? xd.data() + b * cin * h * w : cols.data() + b * ck * p;
    detail::gemm(false, false, cout, p, ck, T(1), wd.data(), ck, col, p, T(0),
                 out.data() + b * cout * p, p);
  }
  if (bias.defined()) {
    auto bdat = bias.data();
    for (int64_t b = 0; b < bsz; ++b)
      for (int64_t co = 0; co < cout; ++co) {
        T* row = out.data() + (b * cout + co) * p;
        for (int64_t i = 0; i < p; ++i) row[i] += bdat[co];
      }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool keep_cols = weight.requires_grad() && grad_enabled();
  if (!keep_cols) cols.clear();
  return Tensor<T>::make_result(
      Shape{bsz, cout, oh, ow}, std::move(out), inputs,
      [=, cols = std::move(cols)](Node<T>& o) {
        const auto& xd = o.inputs[0]->data;
        const auto& wd = o.inputs[1]->data;
        auto* tx = grad_target(o, 0);
        auto* tw = grad_target(o, 1);
        auto* tb = grad_target(o, 2);
        std::vector<T> dcols;
        if (tx && !pointwise) dcols.resize(static_cast<size_t>(ck * p));
        for (int64_t b = 0; b < bsz; ++b) {
          const T* g = o.grad.data() + b * cout * p;
          if (tw) {
            const T* col = pointwise ? xd.data() + b * cin * h * w : cols.data() + b * ck * p;
            detail::gemm(false, true, cout, ck, p, T(1), g, p, col, p, T(1),
                         tw->ensure_grad().data(), ck);
          }
          if (tx) {
            T* gx = tx->ensure_grad().data() + b * cin * h * w;
            if (pointwise) {
              detail::gemm(true, false, ck, p, cout, T(1), wd.data(), ck, g, p, T(1), gx, p);
            } else {
              detail::gemm(true, false, ck, p, cout, T(1), wd.data(), ck, g, p, T(0),
                           dcols.data(), p);
              col2im_add(dcols.data(), cin, h, w, kh, kw, stride, padding, oh, ow, gx);
            }
          }
          if (tb) {
            auto& gb = tb->ensure_grad();
            for (int64_t co = 0; co < cout; ++co) {
              const T* row = g + co * p;
              T acc = 0;
              for (int64_t i = 0; i < p; ++i) acc += row[i];
              gb[co] += acc;
            }
          }
        }
      });
}

template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, int64_t kernel, int64_t stride) {
  if (x.ndim() != 4) throw DimensionError("max_pool2d: expected [B,C,H,W], got " + shape_str(x.shape()));
  const int64_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel < 1 || stride < 1 || kernel > h || kernel > w) {
    throw DimensionError("max_pool2d: kernel " + std::to_string(kernel) + " on " +
                         shape_str(x.shape()));
  }
  const int64_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  auto xd = x.data();
  std::vector<T> out(static_cast<size_t>(bc * oh * ow));
  std::vector<int64_t> argmax(out.size());
  for (int64_t c = 0; c < bc; ++c)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t best = (c * h + oy * stride) * w + ox * stride;
        for (int64_t i = 0; i < kernel; ++i)
          for (int64_t j = 0; j < kernel; ++j) {
            const int64_t idx = (c * h + oy * stride + i) * w + ox * stride + j;
            if (xd[idx] > xd[best] || std::isnan(xd[idx])) best = idx;
          }
        const int64_t o = (c * oh + oy) * ow + ox;
        out[o] = xd[best];
        argmax[o] = best;
      }
  return Tensor<T>::make_result(Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                                [argmax = std::move(argmax)](Node<T>& o) {
                                  auto* t = grad_target(o, 0);
                                  if (!t) return;
                                  auto& g = t->ensure_grad();
                                  for (size_t i = 0; i < argmax.size(); ++i)
                                    g[argmax[i]] += o.grad[i];
                                });
}

template <class T>
Tensor<T> nearest_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  if (x.ndim() < 2) throw DimensionError("nearest_resize: rank < 2");
  if (out_h < 1 || out_w < 1) throw DimensionError("nearest_resize: non-positive output size");
  const int64_t h = x.dim(-2), w = x.dim(-1);
  const int64_t planes = x.numel() / (h * w);
  std::vector<int64_t> src(static_cast<size_t>(out_h * out_w));
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t xx = 0; xx < out_w; ++xx) src[y * out_w + xx] = (y * h / out_h) * w + xx * w / out_w;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape.back() = out_w;
  auto xd = x.data();
  const int64_t plane_out = out_h * out_w, plane_in = h * w;
  std::vector<T> out(static_cast<size_t>(planes * plane_out));
  for (int64_t pl = 0; pl < planes; ++pl)
    for (int64_t i = 0; i < plane_out; ++i) out[pl * plane_out + i] = xd[pl * plane_in + src[i]];
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x},
                                [src = std::move(src), planes, plane_in, plane_out](Node<T>& o) {
                                  auto* t = grad_target(o, 0);
                                  if (!t) return;
                                  auto& g = t->ensure_grad();
                                  for (int64_t pl = 0; pl < planes; ++pl)
                                    for (int64_t i = 0; i < plane_out; ++i)
                                      g[pl * plane_in + src[i]] += o.grad[pl * plane_out + i];
                                });
}

template <class T>
Tensor<T> nearest_upsample(const Tensor<T>& x, int64_t factor) {
  if (factor < 1) throw ConfigError("nearest_upsample: factor must be >= 1");
  return nearest_resize(x, x.dim(-2) * factor, x.dim(-1) * factor);
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
  axis = norm_axis(axis, x.ndim(), "softmax");
  const AxisSplit s = split_axis(x.shape(), axis);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.len * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t a = 0; a < s.len; ++a) mx = std::max(mx, xd[base + a * s.inner]);
      // Accumulate in double so that each output is rounded once.
      thread_local std::vector<double> ex;
      ex.resize(static_cast<size_t>(s.len));
      double total = 0;
      for (int64_t a = 0; a < s.len; ++a) {
        ex[a] = std::exp(static_cast<double>(xd[base + a * s.inner]) - static_cast<double>(mx));
        total += ex[a];
      }
      for (int64_t a = 0; a < s.len; ++a) out[base + a * s.inner] = static_cast<T>(ex[a] / total);
    }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [s](Node<T>& o) {
    auto* t = grad_target(o, 0);
    if (!t) return;
    auto& g = t->ensure_grad();
    const auto& y = o.data;
    for (int64_t ou = 0; ou < s.outer; ++ou)
      for (int64_t i = 0; i < s.inner; ++i) {
        const int64_t base = ou * s.len * s.inner + i;
        T dot = 0;
        for (int64_t a = 0; a < s.len; ++a) dot += o.grad[base + a * s.inner] * y[base + a * s.inner];
        for (int64_t a = 0; a < s.len; ++a) {
          const int64_t k = base + a * s.inner;
          g[k] += y[k] * (o.grad[k] - dot);
        }
      }
  });
}

namespace {

// Shared backward of normalizations: for each statistics group with
// normalized values xhat and reciprocal std rstd, given dxhat,
// dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)).
template <class T>
void normalized_backward(const T* dxhat, const T* xhat, T rstd, int64_t count, int64_t stride,
                         T* dx) {
  T m1 = 0, m2 = 0;
  for (int64_t i = 0; i < count; ++i) {
    m1 += dxhat[i * stride];
    m2 += dxhat[i * stride] * xhat[i * stride];
  }
  m1 /= static_cast<T>(count);
  m2 /= static_cast<T>(count);
  for (int64_t i = 0; i < count; ++i)
    dx[i * stride] += rstd * (dxhat[i * stride] - m1 - xhat[i * stride] * m2);
}

}  // namespace

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<T> xhat(xd.size()), rstd(static_cast<size_t>(rows)), out(xd.size());
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    T mu = 0;
    for (int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (int64_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (int64_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * rstd[r];
      out[r * d + i] = xhat[r * d + i] * gd[i] + bd[i];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& o) {
        const auto& gd = o.inputs[1]->data;
        const T* g = o.grad.data();
        if (auto* tx = grad_target(o, 0)) {
          auto& gx = tx->ensure_grad();
          std::vector<T> dxhat(static_cast<size_t>(d));
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t i = 0; i < d; ++i) dxhat[i] = g[r * d + i] * gd[i];
            normalized_backward(dxhat.data(), xhat.data() + r * d, rstd[r], d, 1,
                                gx.data() + r * d);
          }
        }
        if (auto* tg = grad_target(o, 1)) {
          auto& gg = tg->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
        }
        if (auto* tb = grad_target(o, 2)) {
          auto& gb = tb->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
        }
      });
}

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int64_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  if (x.ndim() < 2) throw DimensionError("group_norm: expected [B,C,...], got " + shape_str(x.shape()));
  const int64_t bsz = x.dim(0), c = x.dim(1);
  if (groups < 1 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("group_norm: affine params " + shape_str(gamma.shape()) + " for " +
                         std::to_string(c) + " channels");
  }
  const int64_t spatial = x.numel() / (bsz * c);
  const int64_t cpg = c / groups, count = cpg * spatial;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<T> xhat(xd.size()), out(xd.size()), rstd(static_cast<size_t>(bsz * groups));
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t gi = 0; gi < groups; ++gi) {
      const int64_t base = (b * c + gi * cpg) * spatial;
      T mu = 0;
      for (int64_t i = 0; i < count; ++i) mu += xd[base + i];
      mu /= static_cast<T>(count);
      T var = 0;
      for (int64_t i = 0; i < count; ++i) var += (xd[base + i] - mu) * (xd[base + i] - mu);
      var /= static_cast<T>(count);
      const T rs = T(1) / std::sqrt(var + eps);
      rstd[b * groups + gi] = rs;
      for (int64_t i = 0; i < count; ++i) {
        const int64_t ch = gi * cpg + i / spatial;
        xhat[base + i] = (xd[base + i] - mu) * rs;
        out[base + i] = xhat[base + i] * gd[ch] + bd[ch];
      }
    }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& o) {
        const auto& gd = o.inputs[1]->data;
        const T* g = o.grad.data();
        if (auto* tx = grad_target(o, 0)) {
          auto& gx = tx->ensure_grad();
          std::vector<T> dxhat(static_cast<size_t>(count));
          for (int64_t b = 0; b < bsz; ++b)
            for (int64_t gi = 0; gi < groups; ++gi) {
              const int64_t base = (b * c + gi * cpg) * spatial;
              for (int64_t i = 0; i < count; ++i)
                dxhat[i] = g[base + i] * gd[gi * cpg + i / spatial];
              normalized_backward(dxhat.data(), xhat.data() + base, rstd[b * groups + gi],
                                  count, 1, gx.data() + base);
            }
        }
        auto* tg = grad_target(o, 1);
        auto* tb = grad_target(o, 2);
        if (tg || tb) {
          T* gg = tg ? tg->ensure_grad().data() : nullptr;
          T* gb = tb ? tb->ensure_grad().data() : nullptr;
          for (int64_t b = 0; b < bsz; ++b)
            for (int64_t ch = 0; ch < c; ++ch) {
              const int64_t base = (b * c + ch) * spatial;
              for (int64_t i = 0; i < spatial; ++i) {
                if (gg) gg[ch] += g[base + i] * xhat[base + i];
                if (gb) gb[ch] += g[base + i];
              }
            }
        }
      });
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                     T eps) {
  if (x.ndim() < 2) throw DimensionError("batch_norm: expected [B,C,...], got " + shape_str(x.shape()));
  const int64_t bsz = x.dim(0), c = x.dim(1), spatial = x.numel() / (bsz * c);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw DimensionError("batch_norm: per-channel params do not match " + shape_str(x.shape()));
  }
  const int64_t count = bsz * spatial;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<T> mu(c), rstd(c), xhat(xd.size()), out(xd.size());
  auto rm = running_mean.data_mut();
  auto rv = running_var.data_mut();
  for (int64_t ch = 0; ch < c; ++ch) {
    T m = 0, var = 0;
    if (training) {
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < spatial; ++i) m += xd[(b * c + ch) * spatial + i];
      m /= static_cast<T>(count);
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < spatial; ++i) {
          const T dv = xd[(b * c + ch) * spatial + i] - m;
          var += dv * dv;
        }
      var /= static_cast<T>(count);
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      rm[ch] = (T(1) - momentum) * rm[ch] + momentum * m;
      rv[ch] = (T(1) - momentum) * rv[ch] + momentum * unbiased;
    } else {
      m = rm[ch];
      var = rv[ch];
    }
    mu[ch] = m;
    rstd[ch] = T(1) / std::sqrt(var + eps);
    for (int64_t b = 0; b < bsz; ++b)
      for (int64_t i = 0; i < spatial; ++i) {
        const int64_t k = (b * c + ch) * spatial + i;
        xhat[k] = (xd[k] - m) * rstd[ch];
        out[k] = xhat[k] * gd[ch] + bd[ch];
      }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& o) {
        const auto& gd = o.inputs[1]->data;
        const T* g = o.grad.data();
        if (auto* tx = grad_target(o, 0)) {
          auto& gx = tx->ensure_grad();
          for (int64_t ch = 0; ch < c; ++ch) {
            if (training) {
              // Gather the channel's elements, apply the shared formula, scatter.
              std::vector<T> dxh(count), xh(count), dx(count, T(0));
              for (int64_t b = 0; b < bsz; ++b)
                for (int64_t i = 0; i < spatial; ++i) {
                  const int64_t k = (b * c + ch) * spatial + i;
                  dxh[b * spatial + i] = g[k] * gd[ch];
                  xh[b * spatial + i] = xhat[k];
                }
              normalized_backward(dxh.data(), xh.data(), rstd[ch], count, 1, dx.data());
              for (int64_t b = 0; b < bsz; ++b)
                for (int64_t i = 0; i < spatial; ++i)
                  gx[(b * c + ch) * spatial + i] += dx[b * spatial + i];
            } else {
              for (int64_t b = 0; b < bsz; ++b)
                for (int64_t i = 0; i < spatial; ++i) {
                  const int64_t k = (b * c + ch) * spatial + i;
                  gx[k] += g[k] * gd[ch] * rstd[ch];
                }
            }
          }
        }
        auto* tg = grad_target(o, 1);
        auto* tb = grad_target(o, 2);
        if (tg || tb) {
          T* gg = tg ? tg->ensure_grad().data() : nullptr;
          T* gb = tb ? tb->ensure_grad().data() : nullptr;
          for (int64_t b = 0; b < bsz; ++b)
            for (int64_t ch = 0; ch < c; ++ch)
              for (int64_t i = 0; i < spatial; ++i) {
                const int64_t k = (b * c + ch) * spatial + i;
                if (gg) gg[ch] += g[k] * xhat[k];
                if (gb) gb[ch] += g[k];
              }
        }
      });
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, T p, bool training, DropoutKey key) {
  if (!(p >= T(0) && p < T(1))) throw ConfigError("dropout: p must lie in [0, 1)");
  if (!training || p == T(0)) return x;
  const uint64_t base = hash_mix({key.seed, key.op_id, key.step});
  const T scale = T(1) / (T(1) - p);
  auto xd = x.data();
  std::vector<T> mask(xd.size()), out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) {
    const bool keep = unit_double(splitmix64(base ^ splitmix64(i))) >= static_cast<double>(p);
    mask[i] = keep ? scale : T(0);
    out[i] = xd[i] * mask[i];
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x},
                                [mask = std::move(mask)](Node<T>& o) {
                                  auto* t = grad_target(o, 0);
                                  if (!t) return;
                                  auto& g = t->ensure_grad();
                                  for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i];
                                });
}

#define FORGELOC_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                      \
  template Tensor<T> rsub_scalar(const Tensor<T>&, T);                                     \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                            \
  template Tensor<T> log(const Tensor<T>&);                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                        \
  template Tensor<T> pow_scalar(const Tensor<T>&, T);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> mean(const Tensor<T>&);                                               \
  template Tensor<T> sum_axis(const Tensor<T>&, int64_t, bool);                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int64_t>&);               \
  template Tensor<T> transpose(const Tensor<T>&, int64_t, int64_t);                        \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int64_t);                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int64_t, \
                            int64_t);                                                      \
  template Tensor<T> max_pool2d(const Tensor<T>&, int64_t, int64_t);                       \
  template Tensor<T> nearest_resize(const Tensor<T>&, int64_t, int64_t);                   \
  template Tensor<T> nearest_upsample(const Tensor<T>&, int64_t);                          \
  template Tensor<T> softmax(const Tensor<T>&, int64_t);                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
  template Tensor<T> group_norm(const Tensor<T>&, int64_t, const Tensor<T>&,               \
                                const Tensor<T>&, T);                                      \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                Tensor<T>&, Tensor<T>&, bool, T, T);                       \
  template Tensor<T> dropout(const Tensor<T>&, T, bool, DropoutKey);

FORGELOC_INSTANTIATE_OPS(float)
FORGELOC_INSTANTIATE_OPS(double)

}  // namespace forgeloc
