#include "rtq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rtq/error.hpp"

namespace rtq {

namespace {

using detail::GradSink;
using detail::Node;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw IndexError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// (outer, extent, inner) decomposition of a shape around one axis.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Node& input(const Node& self, std::size_t i) { return *self.inputs[i]; }

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* __restrict arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* __restrict brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* __restrict brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const bool swap = kind != BinaryKind::sub && a.rank() < b.rank();
  const Tensor& big = swap ? b : a;
  const Tensor& small = swap ? a : b;
  if (!is_suffix(small.shape(), big.shape())) {
    throw ShapeError(std::string("elementwise op shape mismatch: ") + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
  const auto x = big.data();
  const auto y = small.data();
  const std::size_t n = x.size(), m = y.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double yv = y[i % m];
    switch (kind) {
      case BinaryKind::add: out[i] = x[i] + yv; break;
      case BinaryKind::sub: out[i] = x[i] - yv; break;
      case BinaryKind::mul: out[i] = x[i] * yv; break;
    }
  }
  const char* name = kind == BinaryKind::add ? "add" : kind == BinaryKind::sub ? "sub" : "mul";
  return make_result(name, big.shape(), std::move(out), {big, small},
                     [kind, n, m](const Node& self, GradSink& sink) {
                       Node& bx = input(self, 0);
                       Node& sy = input(self, 1);
                       const auto& g = self.grad;
                       if (bx.requires_grad) {
                         auto gx = sink.grad_of(bx);
                         if (kind == BinaryKind::mul) {
                           for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * sy.value[i % m];
                         } else {
                           for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
                         }
                       }
                       if (sy.requires_grad) {
                         auto gy = sink.grad_of(sy);
                         switch (kind) {
                           case BinaryKind::add:
                             for (std::size_t i = 0; i < n; ++i) gy[i % m] += g[i];
                             break;
                           case BinaryKind::sub:
                             for (std::size_t i = 0; i < n; ++i) gy[i % m] -= g[i];
                             break;
                           case BinaryKind::mul:
                             for (std::size_t i = 0; i < n; ++i) gy[i % m] += g[i] * bx.value[i];
                             break;
                         }
                       }
                     });
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& x, F forward, D derivative) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return make_result(name, x.shape(), std::move(out), {x},
                     [derivative](const Node& self, GradSink& sink) {
                       Node& xi = input(self, 0);
                       auto gx = sink.grad_of(xi);
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                         gx[i] += self.grad[i] * derivative(xi.value[i], self.value[i]);
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary("add_scalar", a, [offset](double v) { return v + offset; },
               [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("mul_scalar expects a one-element factor, got " + shape_string(s.shape()));
  const double f = s.data()[0];
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * f;
  return make_result("mul_scalar", a.shape(), std::move(out), {a, s},
                     [](const Node& self, GradSink& sink) {
                       Node& x = input(self, 0);
                       Node& f = input(self, 1);
                       if (x.requires_grad) {
                         auto gx = sink.grad_of(x);
                         for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * f.value[0];
                       }
                       if (f.requires_grad) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * x.value[i];
                         sink.grad_of(f)[0] += acc;
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw ShapeError("matmul shape mismatch: " + shape_string(sa) + " x " + shape_string(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  if (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b) {
    throw ShapeError("matmul batch mismatch: " + shape_string(sa) + " x " + shape_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  const Shape& batch = batch_a.empty() ? batch_b : batch_a;
  const std::size_t batches = numel(batch);
  const bool a_shared = batch_a.empty() && batches > 1;
  const bool b_shared = batch_b.empty();
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batches * m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  if (b_shared) {
    // A's batch folds into its rows.
    gemm_nn(batches * m, k, n, A, B, out.data());
  } else {
    for (std::size_t t = 0; t < batches; ++t) {
      gemm_nn(m, k, n, A + (a_shared ? 0 : t * m * k), B + t * k * n, out.data() + t * m * n);
    }
  }
  return make_result(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [m, k, n, batches, a_shared, b_shared](const Node& self, GradSink& sink) {
        Node& na = input(self, 0);
        Node& nb = input(self, 1);
        const double* G = self.grad.data();
        if (na.requires_grad) {
          double* GA = sink.grad_of(na).data();
          if (b_shared) {
            gemm_nt(batches * m, n, k, G, nb.value.data(), GA);
          } else {
            for (std::size_t t = 0; t < batches; ++t) {
              gemm_nt(m, n, k, G + t * m * n, nb.value.data() + t * k * n, GA + (a_shared ? 0 : t * m * k));
            }
          }
        }
        if (nb.requires_grad) {
          double* GB = sink.grad_of(nb).data();
          if (b_shared) {
            gemm_tn(batches * m, k, n, na.value.data(), G, GB);
          } else {
            for (std::size_t t = 0; t < batches; ++t) {
              gemm_tn(m, k, n, na.value.data() + (a_shared ? 0 : t * m * k), G + t * m * n, GB + t * k * n);
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_string(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t batches = a.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t t = 0; t < batches; ++t) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[t * r * c + j * r + i] = in[t * r * c + i * c + j];
    }
  }
  return make_result("transpose", std::move(out_shape), std::move(out), {a},
                     [r, c, batches](const Node& self, GradSink& sink) {
                       auto g = sink.grad_of(input(self, 0));
                       for (std::size_t t = 0; t < batches; ++t) {
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) {
                             g[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [](const Node& self, GradSink& sink) {
                       auto g = sink.grad_of(input(self, 0));
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const auto& s = a.shape();
  const std::size_t r = s.size();
  if (order.size() != r) throw ShapeError("permute order rank mismatch for " + shape_string(s));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw ShapeError("permute order is not a permutation");
    seen[o] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  const std::size_t total = a.numel();
  // map[i] = source flat index of output flat index i
  auto mapping = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    (*mapping)[i] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  const auto in = a.data();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = in[(*mapping)[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {a},
                     [mapping](const Node& self, GradSink& sink) {
                       auto g = sink.grad_of(input(self, 0));
                       for (std::size_t i = 0; i < mapping->size(); ++i) g[(*mapping)[i]] += self.grad[i];
                     });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, in[base + e * v.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double ev = std::exp(in[base + e * v.inner] - mx);
        out[base + e * v.inner] = ev;
        total += ev;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [v](const Node& self, GradSink& sink) {
    auto g = sink.grad_of(input(self, 0));
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t at = base + e * v.inner;
          dot += self.grad[at] * self.value[at];
        }
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t at = base + e * v.inner;
          g[at] += self.value[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, in[base + e * v.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) total += std::exp(in[base + e * v.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] = in[base + e * v.inner] - lse;
    }
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [v](const Node& self, GradSink& sink) {
    auto g = sink.grad_of(input(self, 0));
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double gsum = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) gsum += self.grad[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t at = base + e * v.inner;
          g[at] += self.grad[at] - std::exp(self.value[at]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d || gain.rank() != 1 || bias.rank() != 1) {
    throw ShapeError("layer_norm gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                     " do not match last axis of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(in.size());
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                     [d, rows, xhat, rstd](const Node& self, GradSink& sink) {
                       Node& nx = input(self, 0);
                       Node& ng = input(self, 1);
                       Node& nb = input(self, 2);
                       const auto& G = self.grad;
                       if (nx.requires_grad) {
                         auto gx = sink.grad_of(nx);
                         std::vector<double> dh(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             dh[j] = G[r * d + j] * ng.value[j];
                             m1 += dh[j];
                             m2 += dh[j] * (*xhat)[r * d + j];
                           }
                           m1 /= static_cast<double>(d);
                           m2 /= static_cast<double>(d);
                           for (std::size_t j = 0; j < d; ++j) {
                             gx[r * d + j] += (*rstd)[r] * (dh[j] - m1 - (*xhat)[r * d + j] * m2);
                           }
                         }
                       }
                       if (ng.requires_grad) {
                         auto gg = sink.grad_of(ng);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < d; ++j) gg[j] += G[r * d + j] * (*xhat)[r * d + j];
                         }
                       }
                       if (nb.requires_grad) {
                         auto gb = sink.grad_of(nb);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < d; ++j) gb[j] += G[r * d + j];
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  Tensor out = unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NumericError("exp overflow");
  }
  return out;
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor l2_normalize(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  const auto in = x.data();
  std::vector<double> out(in.size());
  auto norms = std::make_shared<std::vector<double>>(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double ss = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) ss += in[base + e * v.inner] * in[base + e * v.inner];
      const double nrm = std::max(std::sqrt(ss), 1e-12);
      (*norms)[o * v.inner + i] = nrm;
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] = in[base + e * v.inner] / nrm;
    }
  }
  return make_result("l2_normalize", x.shape(), std::move(out), {x}, [v, norms](const Node& self, GradSink& sink) {
    auto g = sink.grad_of(input(self, 0));
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          dot += self.grad[base + e * v.inner] * self.value[base + e * v.inner];
        }
        const double nrm = (*norms)[o * v.inner + i];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t at = base + e * v.inner;
          g[at] += (self.grad[at] - self.value[at] * dot) / nrm;
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of empty list");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw IndexError("concat axis out of range for " + shape_string(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_string(s0) + " vs " + shape_string(s));
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  const AxisView v = axis_view(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto in = parts[p].data();
    const std::size_t chunk = extents[p] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(in.data() + o * chunk, chunk, out.data() + o * v.extent * v.inner + offset * v.inner);
    }
    offset += extents[p];
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [v, extents](const Node& self, GradSink& sink) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < extents.size(); ++p) {
                         Node& in = input(self, p);
                         const std::size_t chunk = extents[p] * v.inner;
                         if (in.requires_grad) {
                           auto g = sink.grad_of(in);
                           for (std::size_t o = 0; o < v.outer; ++o) {
                             const double* src = self.grad.data() + o * v.extent * v.inner + off * v.inner;
                             for (std::size_t t = 0; t < chunk; ++t) g[o * chunk + t] += src[t];
                           }
                         }
                         off += extents[p];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw IndexError("slice axis out of range for " + shape_string(s));
  if (length == 0 || start + length > s[axis]) {
    throw IndexError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of size " + std::to_string(s[axis]));
  }
  const AxisView v = axis_view(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  const auto in = x.data();
  std::vector<double> out(numel(out_shape));
  const std::size_t chunk = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(in.data() + o * v.extent * v.inner + start * v.inner, chunk, out.data() + o * chunk);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x},
                     [v, start, chunk](const Node& self, GradSink& sink) {
                       auto g = sink.grad_of(input(self, 0));
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         double* dst = g.data() + o * v.extent * v.inner + start * v.inner;
                         for (std::size_t t = 0; t < chunk; ++t) dst[t] += self.grad[o * chunk + t];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  const auto& s = x.shape();
  if (s.empty()) throw ShapeError("gather_rows on a scalar");
  if (indices.empty()) throw IndexError("gather_rows with no indices");
  const std::size_t rows = s[0];
  const std::size_t width = x.numel() / rows;
  for (auto i : indices) {
    if (i >= rows) {
      throw IndexError("row index " + std::to_string(i) + " out of range for " + std::to_string(rows) + " rows");
    }
  }
  Shape out_shape = s;
  out_shape[0] = indices.size();
  const auto in = x.data();
  std::vector<double> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(in.data() + indices[r] * width, width, out.data() + r * width);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  return make_result("gather_rows", std::move(out_shape), std::move(out), {x},
                     [idx, width](const Node& self, GradSink& sink) {
                       auto g = sink.grad_of(input(self, 0));
                       for (std::size_t r = 0; r < idx->size(); ++r) {
                         double* dst = g.data() + (*idx)[r] * width;
                         for (std::size_t t = 0; t < width; ++t) dst[t] += self.grad[r * width + t];
                       }
                     });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_string(table.shape()));
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.dim(0)) {
      throw IndexError("token id " + std::to_string(id) + " outside table of " + std::to_string(table.dim(0)));
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  return gather_rows(table, rows);
}

Tensor sum(const Tensor& x) {
  const auto in = x.data();
  double acc = 0.0;
  for (double v : in) acc += v;
  return make_result("sum", {}, {acc}, {x}, [](const Node& self, GradSink& sink) {
    auto g = sink.grad_of(input(self, 0));
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_last(const Tensor& x) {
  const auto& s = x.shape();
  if (s.empty()) throw ShapeError("sum_last on a scalar");
  const std::size_t d = s.back();
  const std::size_t rows = x.numel() / d;
  Shape out_shape(s.begin(), s.end() - 1);
  const auto in = x.data();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r] += in[r * d + j];
  }
  return make_result("sum_last", std::move(out_shape), std::move(out), {x}, [d, rows](const Node& self, GradSink& sink) {
    auto g = sink.grad_of(input(self, 0));
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r];
    }
  });
}

}  // namespace rtq
