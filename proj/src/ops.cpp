#include "scvm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

namespace scvm::ops {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

[[noreturn]] void shape_fail(const char* op, const std::string& what, const Shape& a) {
  throw ShapeError(std::string(op) + ": " + what + ", got " + to_string(a));
}

template <typename T>
void check_inputs(const char* op, std::initializer_list<const Tensor<T>*> inputs) {
  for (const Tensor<T>* t : inputs) {
    if (!t->defined()) throw ShapeError(std::string(op) + ": undefined input tensor");
  }
  if constexpr (std::is_same_v<T, double>) {
    for (const Tensor<T>* t : inputs) {
      auto d = t->data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i])) {
          throw NumericalError(std::string(op) + ": non-finite input at index " +
                               std::to_string(i));
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& pgrad(Node<T>& self, std::size_t i) {
  return self.parents[i]->ensure_grad();
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

// Rows x cols view of a rank-1 or rank-2 tensor.
struct Rows {
  std::size_t rows;
  std::size_t cols;
};

Rows as_rows(const Shape& s, const char* op) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  shape_fail(op, "expected a vector or matrix", s);
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df_from_out) {
  check_inputs<T>(op, {&x});
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(op, x.shape(), out, {x}, [df_from_out](Node<T>& self) {
    auto& g = pgrad(self, 0);
    const auto& xin = self.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df_from_out(xin[i], self.data[i]);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("add", {&a, &b});
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(self, k)) continue;
        auto& g = pgrad(self, k);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0)) {
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<T> out(a.size());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = a[r * d + c] + b[c];
    return make_result<T>("add", a.shape(), std::move(out), {a, b}, [n, d](Node<T>& self) {
      if (wants(self, 0)) {
        auto& g = pgrad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (wants(self, 1)) {
        auto& g = pgrad(self, 1);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
      }
    });
  }
  shape_fail("add", a.shape(), b.shape());
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("sub", {&a, &b});
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("mul", {&a, &b});
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& da = self.parents[0]->data;
    const auto& db = self.parents[1]->data;
    if (wants(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * db[i];
    }
    if (wants(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * da[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  check_inputs<T>("scale", {&a});
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  check_inputs<T>("add_scalar", {&a});
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + offset;
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("matmul", {&a, &b});
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  MMap<T>(out.data(), m, n).noalias() =
      CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    CMap<T> dc(self.grad.data(), m, n);
    if (wants(self, 0)) {
      MMap<T>(pgrad(self, 0).data(), m, k).noalias() +=
          dc * CMap<T>(self.parents[1]->data.data(), k, n).transpose();
    }
    if (wants(self, 1)) {
      MMap<T>(pgrad(self, 1).data(), k, n).noalias() +=
          CMap<T>(self.parents[0]->data.data(), m, k).transpose() * dc;
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  check_inputs<T>("matmul_nt", {&a, &b});
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    shape_fail("matmul_nt", a.shape(), b.shape());
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  MMap<T>(out.data(), m, n).noalias() =
      CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), n, k).transpose();
  return make_result<T>("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    CMap<T> dc(self.grad.data(), m, n);
    if (wants(self, 0)) {
      MMap<T>(pgrad(self, 0).data(), m, k).noalias() +=
          dc * CMap<T>(self.parents[1]->data.data(), n, k);
    }
    if (wants(self, 1)) {
      MMap<T>(pgrad(self, 1).data(), n, k).noalias() +=
          dc.transpose() * CMap<T>(self.parents[0]->data.data(), m, k);
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_inputs<T>("linear", {&x, &weight});
  const Rows xr = as_rows(x.shape(), "linear");
  if (weight.rank() != 2 || weight.dim(0) != xr.cols) {
    shape_fail("linear", x.shape(), weight.shape());
  }
  const std::size_t r = xr.rows, in = xr.cols, out_dim = weight.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias) {
    check_inputs<T>("linear", {&bias});
    if (bias.rank() != 1 || bias.dim(0) != out_dim) shape_fail("linear", weight.shape(), bias.shape());
  }
  std::vector<T> out(r * out_dim);
  MMap<T> y(out.data(), r, out_dim);
  y.noalias() = CMap<T>(x.data().data(), r, in) * CMap<T>(weight.data().data(), in, out_dim);
  if (has_bias) {
    auto bv = bias.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += bv[j];
  }
  Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{r, out_dim};
  std::vector<Tensor<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<T>("linear", std::move(shape), std::move(out), std::move(parents),
                        [r, in, out_dim, has_bias](Node<T>& self) {
                          CMap<T> dy(self.grad.data(), r, out_dim);
                          if (wants(self, 0)) {
                            MMap<T>(pgrad(self, 0).data(), r, in).noalias() +=
                                dy * CMap<T>(self.parents[1]->data.data(), in, out_dim).transpose();
                          }
                          if (wants(self, 1)) {
                            MMap<T>(pgrad(self, 1).data(), in, out_dim).noalias() +=
                                CMap<T>(self.parents[0]->data.data(), r, in).transpose() * dy;
                          }
                          if (has_bias && wants(self, 2)) {
                            auto& g = pgrad(self, 2);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < out_dim; ++j) g[j] += self.grad[i * out_dim + j];
                          }
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<T> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    check_inputs<T>("concat", {&p});
    if (p.rank() != 1) shape_fail("concat", "expected vectors", p.shape());
    sizes.push_back(p.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const std::size_t total = out.size();
  return make_result<T>("concat", {total}, std::move(out), parts, [sizes](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (wants(self, k)) {
        auto& g = pgrad(self, k);
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[offset + i];
      }
      offset += sizes[k];
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& top, const Tensor<T>& bottom) {
  check_inputs<T>("concat_rows", {&top, &bottom});
  const Rows a = as_rows(top.shape(), "concat_rows");
  const Rows b = as_rows(bottom.shape(), "concat_rows");
  if (a.cols != b.cols) shape_fail("concat_rows", top.shape(), bottom.shape());
  std::vector<T> out(top.data().begin(), top.data().end());
  out.insert(out.end(), bottom.data().begin(), bottom.data().end());
  const std::size_t split = top.size();
  return make_result<T>("concat_rows", {a.rows + b.rows, a.cols}, std::move(out), {top, bottom},
                        [split](Node<T>& self) {
                          if (wants(self, 0)) {
                            auto& g = pgrad(self, 0);
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (wants(self, 1)) {
                            auto& g = pgrad(self, 1);
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
                          }
                        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_inputs<T>("concat_cols", {&p});
    if (p.rank() != 2 || p.dim(0) != rows) shape_fail("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + offset + c] = d[r * widths[k] + c];
    offset += widths[k];
  }
  return make_result<T>("concat_cols", {rows, total}, std::move(out), parts,
                        [rows, total, widths](Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (wants(self, k)) {
                              auto& g = pgrad(self, k);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < widths[k]; ++c)
                                  g[r * widths[k] + c] += self.grad[r * total + off + c];
                            }
                            off += widths[k];
                          }
                        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  check_inputs<T>("slice_cols", {&x});
  if (x.rank() != 2 || begin >= end || end > x.dim(1)) {
    shape_fail("slice_cols", "column range [" + std::to_string(begin) + ", " +
                                 std::to_string(end) + ") out of bounds", x.shape());
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1), width = end - begin;
  std::vector<T> out(rows * width);
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = d[r * cols + begin + c];
  return make_result<T>("slice_cols", {rows, width}, std::move(out), {x},
                        [rows, cols, width, begin](Node<T>& self) {
                          auto& g = pgrad(self, 0);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < width; ++c)
                              g[r * cols + begin + c] += self.grad[r * width + c];
                        });
}

template <typename T>
Tensor<T> row(const Tensor<T>& x, std::size_t index) {
  check_inputs<T>("row", {&x});
  if (x.rank() != 2 || index >= x.dim(0)) {
    shape_fail("row", "row " + std::to_string(index) + " out of bounds", x.shape());
  }
  const std::size_t cols = x.dim(1);
  auto d = x.data();
  std::vector<T> out(d.begin() + index * cols, d.begin() + (index + 1) * cols);
  return make_result<T>("row", {cols}, std::move(out), {x}, [index, cols](Node<T>& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t c = 0; c < cols; ++c) g[index * cols + c] += self.grad[c];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check_inputs<T>("reshape", {&x});
  if (numel(shape) != x.size()) shape_fail("reshape", x.shape(), shape);
  return make_result<T>("reshape", std::move(shape), x.to_vector(), {x}, [](Node<T>& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  check_inputs<T>("scale_rows", {&x, &s});
  if (x.rank() != 2 || s.rank() != 1 || s.dim(0) != x.dim(0)) {
    shape_fail("scale_rows", x.shape(), s.shape());
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] * s[r];
  return make_result<T>("scale_rows", x.shape(), std::move(out), {x, s}, [rows, cols](Node<T>& self) {
    const auto& xd = self.parents[0]->data;
    const auto& sd = self.parents[1]->data;
    if (wants(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r * cols + c] * sd[r];
    }
    if (wants(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += self.grad[r * cols + c] * xd[r * cols + c];
        g[r] += acc;
      }
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
      [](T v, T) {
        const T th = std::tanh(k * (v + c * v * v * v));
        return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * k * (T(1) + T(3) * c * v * v);
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  check_inputs<T>("layer_norm", {&x});
  const Rows xr = as_rows(x.shape(), "layer_norm");
  const bool affine = gamma.defined();
  if (affine != beta.defined()) throw ShapeError("layer_norm: gamma and beta must be given together");
  if (affine) {
    check_inputs<T>("layer_norm", {&gamma, &beta});
    if (gamma.shape() != Shape{xr.cols} || beta.shape() != Shape{xr.cols}) {
      shape_fail("layer_norm", x.shape(), gamma.shape());
    }
  }
  const std::size_t rows = xr.rows, n = xr.cols;
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr_ptr = d.data() + r * n;
    T mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += xr_ptr[c];
    mu /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (xr_ptr[c] - mu) * (xr_ptr[c] - mu);
    var /= T(n);
    rstd[r] = T(1) / std::sqrt(var + T(eps));
    const bool constant = std::all_of(xr_ptr, xr_ptr + n, [&](T v) { return v == xr_ptr[0]; });
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = constant ? T(0) : (xr_ptr[c] - mu) * rstd[r];
    }
  }
  std::vector<T> out = xhat;
  if (affine) {
    auto g = gamma.data();
    auto b = beta.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xhat[r * n + c] * g[c] + b[c];
  }
  std::vector<Tensor<T>> parents{x};
  if (affine) {
    parents.push_back(gamma);
    parents.push_back(beta);
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), std::move(parents),
      [rows, n, affine, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* g = affine ? self.parents[1]->data.data() : nullptr;
        if (wants(self, 0)) {
          auto& gx = pgrad(self, 0);
          std::vector<T> dxhat(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < n; ++c) {
              dxhat[c] = self.grad[r * n + c] * (affine ? g[c] : T(1));
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xhat[r * n + c];
            }
            mean_d /= T(n);
            mean_dx /= T(n);
            for (std::size_t c = 0; c < n; ++c) {
              gx[r * n + c] += rstd[r] * (dxhat[c] - mean_d - xhat[r * n + c] * mean_dx);
            }
          }
        }
        if (affine && wants(self, 1)) {
          auto& gg = pgrad(self, 1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += self.grad[r * n + c] * xhat[r * n + c];
        }
        if (affine && wants(self, 2)) {
          auto& gb = pgrad(self, 2);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += self.grad[r * n + c];
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  check_inputs<T>("softmax", {&x});
  const Rows xr = as_rows(x.shape(), "softmax");
  const std::size_t rows = xr.rows, n = xr.cols;
  std::vector<T> out(x.size());
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = d.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z = 0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= z;
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [rows, n](Node<T>& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x) {
  check_inputs<T>("mean_pool", {&x});
  if (x.rank() != 2 || x.dim(0) == 0) shape_fail("mean_pool", "expected a non-empty token grid", x.shape());
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(cols, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += x[r * cols + c];
  for (auto& v : out) v /= T(rows);
  return make_result<T>("mean_pool", {cols}, std::move(out), {x}, [rows, cols](Node<T>& self) {
    auto& g = pgrad(self, 0);
    const T inv = T(1) / T(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c] * inv;
  });
}

template <typename T>
Tensor<T> max_pool(const Tensor<T>& x) {
  check_inputs<T>("max_pool", {&x});
  if (x.rank() != 2 || x.dim(0) == 0) shape_fail("max_pool", "expected a non-empty token grid", x.shape());
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(cols);
  std::vector<std::size_t> arg(cols, 0);
  bool tied = false;
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = x[c];
    for (std::size_t r = 1; r < rows; ++r) {
      const T v = x[r * cols + c];
      if (v > out[c]) {
        out[c] = v;
        arg[c] = r;
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (r != arg[c] && x[r * cols + c] == out[c]) tied = true;
    }
  }
  auto result = make_result<T>("max_pool", {cols}, std::move(out), {x}, [cols, arg](Node<T>& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t c = 0; c < cols; ++c) g[arg[c] * cols + c] += self.grad[c];
  });
  result.node()->non_differentiable = tied;
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  check_inputs<T>("sum", {&x});
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>("sum", {}, {acc}, {x}, [](Node<T>& self) {
    auto& g = pgrad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.defined() && x.size() == 0) shape_fail("mean", "empty tensor", x.shape());
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, double eps) {
  check_inputs<T>("cosine_similarity", {&a, &b});
  if (a.rank() != 1 || a.shape() != b.shape()) shape_fail("cosine_similarity", a.shape(), b.shape());
  T dot = 0, na2 = 0, nb2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const T na = std::sqrt(na2), nb = std::sqrt(nb2);
  const bool clamped = na * nb < T(eps);
  const T denom = clamped ? T(eps) : na * nb;
  const T cos = dot / denom;
  return make_result<T>("cosine_similarity", {}, {cos}, {a, b},
                        [cos, denom, na2, nb2, clamped](Node<T>& self) {
                          const auto& ad = self.parents[0]->data;
                          const auto& bd = self.parents[1]->data;
                          const T go = self.grad[0];
                          if (wants(self, 0)) {
                            auto& g = pgrad(self, 0);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const T d = bd[i] / denom - (clamped ? T(0) : cos * ad[i] / na2);
                              g[i] += go * d;
                            }
                          }
                          if (wants(self, 1)) {
                            auto& g = pgrad(self, 1);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const T d = ad[i] / denom - (clamped ? T(0) : cos * bd[i] / nb2);
                              g[i] += go * d;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target) {
  check_inputs<T>("cross_entropy", {&logits});
  if (logits.rank() != 1 || logits.size() == 0) {
    shape_fail("cross_entropy", "expected a non-empty logit vector", logits.shape());
  }
  if (target >= logits.size()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                            " outside " + std::to_string(logits.size()) + " classes");
  }
  auto d = logits.data();
  const T mx = *std::max_element(d.begin(), d.end());
  T z = 0;
  for (T v : d) z += std::exp(v - mx);
  const T lse = mx + std::log(z);
  return make_result<T>("cross_entropy", {}, {lse - d[target]}, {logits},
                        [lse, target](Node<T>& self) {
                          auto& g = pgrad(self, 0);
                          const auto& ld = self.parents[0]->data;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T p = std::exp(ld[i] - lse);
                            g[i] += self.grad[0] * (p - (i == target ? T(1) : T(0)));
                          }
                        });
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  check_inputs<T>("patchify", {&image});
  if (image.rank() != 3 || patch == 0 || image.dim(0) % patch || image.dim(1) % patch) {
    shape_fail("patchify", "image not divisible into " + std::to_string(patch) + "x" +
                               std::to_string(patch) + " patches", image.shape());
  }
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  const std::size_t gh = h / patch, gw = w / patch, width = patch * patch * ch;
  // index[k] = source offset of output element k
  std::vector<std::size_t> index(gh * gw * width);
  std::size_t k = 0;
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < ch; ++c)
            index[k++] = ((py * patch + y) * w + (px * patch + x)) * ch + c;
  std::vector<T> out(index.size());
  auto d = image.data();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = d[index[i]];
  return make_result<T>("patchify", {gh * gw, width}, std::move(out), {image},
                        [index = std::move(index)](Node<T>& self) {
                          auto& g = pgrad(self, 0);
                          for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
                        });
}

#define SCVM_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                         \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                              \
  template Tensor<T> concat_rows(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                         \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);             \
  template Tensor<T> row(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                   \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> tanh(const Tensor<T>&);                                             \
  template Tensor<T> sigmoid(const Tensor<T>&);                                          \
  template Tensor<T> relu(const Tensor<T>&);                                             \
  template Tensor<T> gelu(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> softmax(const Tensor<T>&);                                          \
  template Tensor<T> mean_pool(const Tensor<T>&);                                        \
  template Tensor<T> max_pool(const Tensor<T>&);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                              \
  template Tensor<T> mean(const Tensor<T>&);                                             \
  template Tensor<T> cosine_similarity(const Tensor<T>&, const Tensor<T>&, double);      \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);

SCVM_INSTANTIATE_OPS(float)
SCVM_INSTANTIATE_OPS(double)

#undef SCVM_INSTANTIATE_OPS

}  // namespace scvm::ops
