#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/diff/graph.hpp"
#include "miro/diff/tensor.hpp"

namespace miro {

namespace detail {

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(s));
  }
}

inline void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
  }
}

template <typename T, typename F, typename D>
Var<T> unary(const char* op, Var<T> x, F f, D df) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const std::size_t xi = x.id;
  return x.graph->record(op, std::move(out), {xi},
                         [xi, df](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(xi)) return;
                           const Tensor<T>& in = g.value(xi);
                           Tensor<T>& gx = g.grad_for(xi);
                           for (std::size_t i = 0; i < in.size(); ++i) {
                             gx[i] += gout[i] * df(in[i]);
                           }
                         });
}

// Unfolds k x k windows of an N x C x H x W batch into a (C*k*k) x (N*Ho*Wo)
// matrix.
template <typename T>
void im2col(const T* in, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t ho, std::size_t wo, T* col) {
  const std::size_t cols = n * ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col + ((ci * k + ki) * k + kj) * cols;
        for (std::size_t b = 0; b < n; ++b) {
          const T* plane = in + (b * c + ci) * h * w;
          T* dst = row + b * ho * wo;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const T* src = plane + (oh * stride + ki) * w + kj;
            for (std::size_t ow = 0; ow < wo; ++ow) dst[oh * wo + ow] = src[ow * stride];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into the image batch.
template <typename T>
void col2im(const T* col, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t ho, std::size_t wo, T* out) {
  const std::size_t cols = n * ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((ci * k + ki) * k + kj) * cols;
        for (std::size_t b = 0; b < n; ++b) {
          T* plane = out + (b * c + ci) * h * w;
          const T* src = row + b * ho * wo;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            T* dst = plane + (oh * stride + ki) * w + kj;
            for (std::size_t ow = 0; ow < wo; ++ow) dst[ow * stride] += src[oh * wo + ow];
          }
        }
      }
    }
  }
}

// [C x (N*P)] <-> [N x C x P]
template <typename T>
void channel_major_to_batch(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(src + (ci * n + b) * p, p, dst + (b * c + ci) * p);
}

template <typename T>
void batch_to_channel_major(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      std::copy_n(src + (b * c + ci) * p, p, dst + (ci * n + b) * p);
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::graph_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t m = sa[0], n = sb[1];
  Tensor<T> out(Shape{m, n});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  const std::size_t ai = a.id, bi = b.id;
  return g.record("matmul", std::move(out), {ai, bi},
                  [ai, bi](Graph<T>& g, const Tensor<T>& gout) {
                    const auto go = as_matrix(gout);
                    if (g.requires_grad(ai)) {
                      as_matrix(g.grad_for(ai)).noalias() +=
                          go * as_matrix(g.value(bi)).transpose();
                    }
                    if (g.requires_grad(bi)) {
                      as_matrix(g.grad_for(bi)).noalias() +=
                          as_matrix(g.value(ai)).transpose() * go;
                    }
                  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  detail::require_rank("transpose", a.shape(), 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out(Shape{c, r});
  as_matrix(out) = as_matrix(a.value()).transpose();
  const std::size_t ai = a.id;
  return a.graph->record("transpose", std::move(out), {ai},
                         [ai](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           as_matrix(g.grad_for(ai)) += as_matrix(gout).transpose();
                         });
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::graph_of(a, b);
  detail::require_same("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  out += b.value();
  const std::size_t ai = a.id, bi = b.id;
  return g.record("add", std::move(out), {ai, bi},
                  [ai, bi](Graph<T>& g, const Tensor<T>& gout) {
                    if (g.requires_grad(ai)) g.grad_for(ai) += gout;
                    if (g.requires_grad(bi)) g.grad_for(bi) += gout;
                  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::graph_of(a, b);
  detail::require_same("sub", a.shape(), b.shape());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record("sub", std::move(out), {ai, bi},
                  [ai, bi](Graph<T>& g, const Tensor<T>& gout) {
                    if (g.requires_grad(ai)) g.grad_for(ai) += gout;
                    if (g.requires_grad(bi)) {
                      Tensor<T>& gb = g.grad_for(bi);
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gout[i];
                    }
                  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = detail::graph_of(a, b);
  detail::require_same("mul", a.shape(), b.shape());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record("mul", std::move(out), {ai, bi},
                  [ai, bi](Graph<T>& g, const Tensor<T>& gout) {
                    const Tensor<T>& av = g.value(ai);
                    const Tensor<T>& bv = g.value(bi);
                    if (g.requires_grad(ai)) {
                      Tensor<T>& ga = g.grad_for(ai);
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * bv[i];
                    }
                    if (g.requires_grad(bi)) {
                      Tensor<T>& gb = g.grad_for(bi);
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * av[i];
                    }
                  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  return detail::unary<T>("scale", a, [c](T x) { return c * x; }, [c](T) { return c; });
}

template <typename T>
Var<T> square(Var<T> a) {
  return detail::unary<T>("square", a, [](T x) { return x * x; },
                          [](T x) { return T{2} * x; });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return detail::unary<T>("tanh", a, [](T x) { return std::tanh(x); },
                          [](T x) {
                            const T t = std::tanh(x);
                            return T{1} - t * t;
                          });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); },
                          [](T x) { return std::exp(x); });
}

// ELU with derivative taken from the output (out + 1 on the negative side).
template <typename T>
Var<T> elu(Var<T> a) {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Tensor<T>& in = a.value();
  Tensor<T> out(in.shape());
  const auto x = Eigen::Map<const Array>(in.data(), static_cast<Eigen::Index>(in.size()));
  Eigen::Map<Array>(out.data(), static_cast<Eigen::Index>(out.size())) =
      x.max(T{0}) + (x.min(T{0}).exp() - T{1});
  const std::size_t ai = a.id, oi = a.graph->size();
  return a.graph->record("elu", std::move(out), {ai},
                         [ai, oi](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           const Tensor<T>& in = g.value(ai);
                           const Tensor<T>& y = g.value(oi);
                           Tensor<T>& ga = g.grad_for(ai);
                           for (std::size_t i = 0; i < in.size(); ++i) {
                             ga[i] += in[i] > T{0} ? gout[i] : gout[i] * (y[i] + T{1});
                           }
                         });
}

// Gradient passes only strictly inside the bounds.
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  return detail::unary<T>("clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
                          [lo, hi](T x) { return (x > lo && x < hi) ? T{1} : T{0}; });
}

// Positive scale from an unconstrained log-std: exp(clamp(x, lo, hi)).
template <typename T>
Var<T> std_from_log_std(Var<T> log_std, T lo = T{-5}, T hi = T{2}) {
  return detail::unary<T>("std_from_log_std", log_std,
                          [lo, hi](T x) { return std::exp(std::clamp(x, lo, hi)); },
                          [lo, hi](T x) {
                            return (x > lo && x < hi) ? std::exp(x) : T{0};
                          });
}

// x[N x M] + bias[M] broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  Graph<T>& g = detail::graph_of(x, bias);
  detail::require_rank("add_bias", x.shape(), 2);
  if (bias.size() != x.dim(1)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const Tensor<T>& b = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  const std::size_t xi = x.id, bi = bias.id;
  return g.record("add_bias", std::move(out), {xi, bi},
                  [xi, bi, rows, cols](Graph<T>& g, const Tensor<T>& gout) {
                    if (g.requires_grad(xi)) g.grad_for(xi) += gout;
                    if (g.requires_grad(bi)) {
                      Tensor<T>& gb = g.grad_for(bi);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) gb[c] += gout[r * cols + c];
                    }
                  });
}

// x[N x C x H x W] + bias[C] broadcast over batch and pixels.
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  Graph<T>& g = detail::graph_of(x, bias);
  detail::require_rank("add_channel_bias", x.shape(), 4);
  const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  if (bias.size() != c) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  const Tensor<T>& b = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci) {
      T* row = out.data() + (i * c + ci) * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += b[ci];
    }
  const std::size_t xi = x.id, bi = bias.id;
  return g.record("add_channel_bias", std::move(out), {xi, bi},
                  [xi, bi, n, c, p](Graph<T>& g, const Tensor<T>& gout) {
                    if (g.requires_grad(xi)) g.grad_for(xi) += gout;
                    if (g.requires_grad(bi)) {
                      Tensor<T>& gb = g.grad_for(bi);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t ci = 0; ci < c; ++ci) {
                          const T* row = gout.data() + (i * c + ci) * p;
                          T acc{0};
                          for (std::size_t j = 0; j < p; ++j) acc += row[j];
                          gb[ci] += acc;
                        }
                    }
                  });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& in = a.value();
  T acc{0};
  for (T v : in.values()) acc += v;
  const std::size_t ai = a.id;
  return a.graph->record("sum", Tensor<T>::scalar(acc), {ai},
                         [ai](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           Tensor<T>& ga = g.grad_for(ai);
                           const T s = gout[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
                         });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

// Per-row sums of a 2-D tensor: [N x M] -> [N].
template <typename T>
Var<T> sum_rows(Var<T> a) {
  detail::require_rank("sum_rows", a.shape(), 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor<T> out(Shape{rows});
  const Tensor<T>& in = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{0};
    for (std::size_t c = 0; c < cols; ++c) acc += in[r * cols + c];
    out[r] = acc;
  }
  const std::size_t ai = a.id;
  return a.graph->record("sum_rows", std::move(out), {ai},
                         [ai, rows, cols](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           Tensor<T>& ga = g.grad_for(ai);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += gout[r];
                         });
}

// Shift-stable log(sum(exp(row))) for every row of [N x M] -> [N].
template <typename T>
Var<T> logsumexp_rows(Var<T> a) {
  detail::require_rank("logsumexp_rows", a.shape(), 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (cols == 0) throw DimensionError("logsumexp: empty input");
  const Tensor<T>& in = a.value();
  Tensor<T> out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * cols;
    const T m = *std::max_element(row, row + cols);
    T acc{0};
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(row[c] - m);
    out[r] = m + std::log(acc);
  }
  const std::size_t ai = a.id, oi = a.graph->size();
  return a.graph->record("logsumexp", std::move(out), {ai},
                         [ai, oi, rows, cols](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           const Tensor<T>& in = g.value(ai);
                           const Tensor<T>& lse = g.value(oi);
                           Tensor<T>& ga = g.grad_for(ai);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c) {
                               const std::size_t i = r * cols + c;
                               ga[i] += gout[r] * std::exp(in[i] - lse[r]);
                             }
                         });
}

// log(sum(exp(x))) of a vector, returned as a scalar.
template <typename T>
Var<T> logsumexp(Var<T> x) {
  detail::require_rank("logsumexp", x.shape(), 1);
  if (x.dim(0) == 0) throw DimensionError("logsumexp: empty input");
  Var<T> row = reshape(x, Shape{1, x.dim(0)});
  return reshape(logsumexp_rows(row), Shape{});
}

// Diagonal of a square matrix.
template <typename T>
Var<T> diagonal(Var<T> a) {
  detail::require_rank("diagonal", a.shape(), 2);
  const std::size_t n = a.dim(0);
  if (a.dim(1) != n) throw DimensionError("diagonal: non-square " + shape_str(a.shape()));
  Tensor<T> out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i * n + i];
  const std::size_t ai = a.id;
  return a.graph->record("diagonal", std::move(out), {ai},
                         [ai, n](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           Tensor<T>& ga = g.grad_for(ai);
                           for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += gout[i];
                         });
}

// ---------------------------------------------------------------- structure

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ai = a.id;
  return a.graph->record("reshape", std::move(out), {ai},
                         [ai](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           Tensor<T>& ga = g.grad_for(ai);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
                         });
}

// Rows [begin, end) of a tensor whose leading axis is the row axis.
template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (s.empty() || begin > end || end > s[0]) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " + shape_str(s));
  }
  const std::size_t stride = a.size() / std::max<std::size_t>(s[0], 1);
  Shape os = s;
  os[0] = end - begin;
  Tensor<T> out(os);
  std::copy_n(a.value().data() + begin * stride, out.size(), out.data());
  const std::size_t ai = a.id;
  return a.graph->record("slice_rows", std::move(out), {ai},
                         [ai, begin, stride](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           T* ga = g.grad_for(ai).data() + begin * stride;
                           for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
                         });
}

// Columns [begin, end) of a 2-D tensor.
template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  detail::require_rank("slice_cols", a.shape(), 2);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (begin > end || end > cols) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.value().data() + r * cols + begin, w, out.data() + r * w);
  const std::size_t ai = a.id;
  return a.graph->record("slice_cols", std::move(out), {ai},
                         [ai, rows, cols, begin, w](Graph<T>& g, const Tensor<T>& gout) {
                           if (!g.requires_grad(ai)) return;
                           Tensor<T>& ga = g.grad_for(ai);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < w; ++c)
                               ga[r * cols + begin + c] += gout[r * w + c];
                         });
}

// Horizontal concatenation of 2-D tensors with equal row counts.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Graph<T>& g = *parts.front().graph;
  const std::size_t rows = parts.front().dim(0);
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    if (p.graph != &g) throw ContractError("operands belong to different graphs");
    detail::require_rank("concat_cols", p.shape(), 2);
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    ids.push_back(p.id);
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor<T> out(Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  return g.record("concat_cols", std::move(out), ids,
                  [ids, widths, rows, total](Graph<T>& g, const Tensor<T>& gout) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (g.requires_grad(ids[k])) {
                        Tensor<T>& gk = g.grad_for(ids[k]);
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t c = 0; c < widths[k]; ++c)
                            gk[r * widths[k] + c] += gout[r * total + off + c];
                      }
                      off += widths[k];
                    }
                  });
}

// Vertical concatenation along the leading axis; trailing extents must match.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Graph<T>& g = *parts.front().graph;
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> ids, sizes;
  for (const auto& p : parts) {
    if (p.graph != &g) throw ContractError("operands belong to different graphs");
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (p.shape().empty() || t != tail) {
      throw DimensionError("concat_rows: shape mismatch " +
                           shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
    ids.push_back(p.id);
    sizes.push_back(p.size());
  }
  Shape os = parts.front().shape();
  os[0] = rows;
  Tensor<T> out(os);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.size(), out.data() + off);
    off += p.size();
  }
  return g.record("concat_rows", std::move(out), ids,
                  [ids, sizes](Graph<T>& g, const Tensor<T>& gout) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (g.requires_grad(ids[k])) {
                        Tensor<T>& gk = g.grad_for(ids[k]);
                        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += gout[off + i];
                      }
                      off += sizes[k];
                    }
                  });
}

// ---------------------------------------------------------------- convolution

// Valid cross-correlation. input is C x H x W or N x C x H x W; kernels are
// C_out x C_in x k x k. Output keeps the input's rank.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, std::size_t stride) {
  Graph<T>& g = detail::graph_of(input, kernels);
  const Shape& is = input.shape();
  const Shape& ks = kernels.shape();
  const bool batched = is.size() == 4;
  if (!(is.size() == 3 || batched) || ks.size() != 4 || ks[2] != ks[3]) {
    throw DimensionError("conv2d: unsupported shapes input " + shape_str(is) +
                         ", kernels " + shape_str(ks));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t n = batched ? is[0] : 1;
  const std::size_t c = is[is.size() - 3], h = is[is.size() - 2], w = is[is.size() - 1];
  const std::size_t co = ks[0], k = ks[2];
  if (ks[1] != c) {
    throw DimensionError("conv2d: channel mismatch input " + shape_str(is) + ", kernels " +
                         shape_str(ks));
  }
  if (k > h || k > w) {
    throw DimensionError("conv2d: kernel " + shape_str(ks) + " larger than input " +
                         shape_str(is));
  }
  const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  const std::size_t ckk = c * k * k, cols = n * ho * wo;

  auto col = std::make_shared<Tensor<T>>(Shape{ckk, cols});
  detail::im2col(input.value().data(), n, c, h, w, k, stride, ho, wo, col->data());
  Tensor<T> tmp(Shape{co, cols});
  as_matrix(tmp).noalias() = as_matrix(kernels.value(), co, ckk) * as_matrix(*col);
  Shape os = batched ? Shape{n, co, ho, wo} : Shape{co, ho, wo};
  Tensor<T> out(os);
  detail::channel_major_to_batch(tmp.data(), n, co, ho * wo, out.data());

  const std::size_t ii = input.id, ki = kernels.id;
  const bool keep_col = g.recording() && g.requires_grad(ki);
  if (!keep_col) col.reset();
  return g.record(
      "conv2d", std::move(out), {ii, ki},
      [=](Graph<T>& g, const Tensor<T>& gout) {
        Tensor<T> gm(Shape{co, cols});
        detail::batch_to_channel_major(gout.data(), n, co, ho * wo, gm.data());
        if (g.requires_grad(ki)) {
          as_matrix(g.grad_for(ki), co, ckk).noalias() +=
              as_matrix(gm) * as_matrix(*col).transpose();
        }
        if (g.requires_grad(ii)) {
          Tensor<T> gcol(Shape{ckk, cols});
          as_matrix(gcol).noalias() =
              as_matrix(g.value(ki), co, ckk).transpose() * as_matrix(gm);
          detail::col2im(gcol.data(), n, c, h, w, k, stride, ho, wo,
                         g.grad_for(ii).data());
        }
      });
}

// Adjoint of conv2d with respect to its input: maps N x C_in x h x w to
// N x C_out x out_h x out_w using kernels C_in x C_out x k x k, where
// (out_h - k) / stride + 1 == h. Border pixels no window reaches get zero.
template <typename T>
Var<T> conv_transpose2d(Var<T> input, Var<T> kernels, std::size_t stride, std::size_t out_h,
                        std::size_t out_w) {
  Graph<T>& g = detail::graph_of(input, kernels);
  const Shape& is = input.shape();
  const Shape& ks = kernels.shape();
  if (is.size() != 4 || ks.size() != 4 || ks[2] != ks[3] || ks[0] != is[1]) {
    throw DimensionError("conv_transpose2d: unsupported shapes input " + shape_str(is) +
                         ", kernels " + shape_str(ks));
  }
  if (stride == 0) throw ContractError("conv_transpose2d: stride must be positive");
  const std::size_t n = is[0], ci = is[1], h = is[2], w = is[3];
  const std::size_t co = ks[1], k = ks[2];
  if (k > out_h || k > out_w || (out_h - k) / stride + 1 != h ||
      (out_w - k) / stride + 1 != w) {
    throw DimensionError("conv_transpose2d: output " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " inconsistent with input " +
                         shape_str(is) + " and kernels " + shape_str(ks));
  }
  const std::size_t ckk = co * k * k, cols = n * h * w;
  auto xm = std::make_shared<Tensor<T>>(Shape{ci, cols});
  detail::batch_to_channel_major(input.value().data(), n, ci, h * w, xm->data());
  Tensor<T> col(Shape{ckk, cols});
  as_matrix(col).noalias() = as_matrix(kernels.value(), ci, ckk).transpose() * as_matrix(*xm);
  Tensor<T> out(Shape{n, co, out_h, out_w});
  detail::col2im(col.data(), n, co, out_h, out_w, k, stride, h, w, out.data());

  const std::size_t ii = input.id, ki = kernels.id;
  return g.record(
      "conv_transpose2d", std::move(out), {ii, ki},
      [=](Graph<T>& g, const Tensor<T>& gout) {
        Tensor<T> gcol(Shape{ckk, cols});
        detail::im2col(gout.data(), n, co, out_h, out_w, k, stride, h, w, gcol.data());
        if (g.requires_grad(ki)) {
          as_matrix(g.grad_for(ki), ci, ckk).noalias() +=
              as_matrix(*xm) * as_matrix(gcol).transpose();
        }
        if (g.requires_grad(ii)) {
          Tensor<T> gx(Shape{ci, cols});
          as_matrix(gx).noalias() = as_matrix(g.value(ki), ci, ckk) * as_matrix(gcol);
          Tensor<T>& gi = g.grad_for(ii);
          Tensor<T> tmp(gi.shape());
          detail::channel_major_to_batch(gx.data(), n, ci, h * w, tmp.data());
          gi += tmp;
        }
      });
}

// ---------------------------------------------------------------- Gaussians

// Diagonal Gaussian whose moments live in a graph. Row-batched: mean and std
// share any shape; each row of a 2-D pair is one distribution.
template <typename T>
struct DiagGaussian {
  Var<T> mean;
  Var<T> std;
};

// mean + noise * std. Zero noise yields the mean bit-exactly.
template <typename T>
Var<T> reparam_sample(const DiagGaussian<T>& dist, const Tensor<T>& noise) {
  Graph<T>& g = detail::graph_of(dist.mean, dist.std);
  detail::require_same("reparam_sample", dist.mean.shape(), dist.std.shape());
  detail::require_same("reparam_sample", dist.mean.shape(), noise.shape());
  const Tensor<T>& mu = dist.mean.value();
  const Tensor<T>& sd = dist.std.value();
  Tensor<T> out(mu.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(sd[i] >= T{0})) throw InvariantError("reparam_sample: negative std");
    out[i] = noise[i] == T{0} ? mu[i] : mu[i] + noise[i] * sd[i];
  }
  const std::size_t mi = dist.mean.id, si = dist.std.id;
  auto eps = std::make_shared<const Tensor<T>>(noise);
  return g.record("reparam_sample", std::move(out), {mi, si},
                  [mi, si, eps](Graph<T>& g, const Tensor<T>& gout) {
                    if (g.requires_grad(mi)) g.grad_for(mi) += gout;
                    if (g.requires_grad(si)) {
                      Tensor<T>& gs = g.grad_for(si);
                      for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += gout[i] * (*eps)[i];
                    }
                  });
}

namespace detail {

template <typename T>
Var<T> kl_impl(const DiagGaussian<T>& p, const DiagGaussian<T>& q, bool rows) {
  Graph<T>& g = graph_of(p.mean, q.mean);
  require_same("kl_diag_gaussian", p.mean.shape(), q.mean.shape());
  require_same("kl_diag_gaussian", p.std.shape(), p.mean.shape());
  require_same("kl_diag_gaussian", q.std.shape(), q.mean.shape());
  const Tensor<T>& mp = p.mean.value();
  const Tensor<T>& sp = p.std.value();
  const Tensor<T>& mq = q.mean.value();
  const Tensor<T>& sq = q.std.value();
  const std::size_t total = mp.size();
  std::size_t groups = 1;
  if (rows) {
    require_rank("kl_diag_gaussian_rows", mp.shape(), 2);
    groups = mp.dim(0);
  }
  const std::size_t per = groups ? total / groups : 0;
  Tensor<T> out = rows ? Tensor<T>(Shape{groups}) : Tensor<T>::scalar(T{0});
  for (std::size_t i = 0; i < total; ++i) {
    if (!(sp[i] > T{0}) || !(sq[i] > T{0})) {
      throw InvariantError("kl_diag_gaussian: std must be positive");
    }
    const T d = mp[i] - mq[i];
    const T term = std::log(sq[i] / sp[i]) + (sp[i] * sp[i] + d * d) / (T{2} * sq[i] * sq[i]) -
                   T{0.5};
    out[rows ? i / per : 0] += term;
  }
  const std::size_t a = p.mean.id, b = p.std.id, c = q.mean.id, e = q.std.id;
  return g.record(rows ? "kl_diag_gaussian_rows" : "kl_diag_gaussian", std::move(out),
                  {a, b, c, e}, [=](Graph<T>& g, const Tensor<T>& gout) {
                    const Tensor<T>& mp = g.value(a);
                    const Tensor<T>& sp = g.value(b);
                    const Tensor<T>& mq = g.value(c);
                    const Tensor<T>& sq = g.value(e);
                    Tensor<T>* gmp = g.requires_grad(a) ? &g.grad_for(a) : nullptr;
                    Tensor<T>* gsp = g.requires_grad(b) ? &g.grad_for(b) : nullptr;
                    Tensor<T>* gmq = g.requires_grad(c) ? &g.grad_for(c) : nullptr;
                    Tensor<T>* gsq = g.requires_grad(e) ? &g.grad_for(e) : nullptr;
                    for (std::size_t i = 0; i < total; ++i) {
                      const T go = gout[rows ? i / per : 0];
                      const T d = mp[i] - mq[i];
                      const T vq = sq[i] * sq[i];
                      if (gmp) (*gmp)[i] += go * d / vq;
                      if (gmq) (*gmq)[i] -= go * d / vq;
                      if (gsp) (*gsp)[i] += go * (sp[i] / vq - T{1} / sp[i]);
                      if (gsq) {
                        (*gsq)[i] += go * (T{1} / sq[i] - (sp[i] * sp[i] + d * d) / (vq * sq[i]));
                      }
                    }
                  });
}

}  // namespace detail

// KL(p || q) summed over every element.
template <typename T>
Var<T> kl_diag_gaussian(const DiagGaussian<T>& p, const DiagGaussian<T>& q) {
  return detail::kl_impl(p, q, false);
}

// Row-wise KL(p || q) for N x d moment matrices: -> [N].
template <typename T>
Var<T> kl_diag_gaussian_rows(const DiagGaussian<T>& p, const DiagGaussian<T>& q) {
  return detail::kl_impl(p, q, true);
}

}  // namespace miro
