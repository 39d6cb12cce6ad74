#include "vafuse/ops.hpp"

#include "vafuse/error.hpp"
#include "vafuse/rng.hpp"

#include <algorithm>
#include <cmath>

namespace vafuse {
namespace {

using detail::Node;

// Grad buffer of input i, or nullptr when that input is a constant.
std::vector<double>* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_storage() : nullptr;
}

const std::vector<double>& input_value(const Node& self, std::size_t i) { return self.inputs[i]->value; }

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_index;  // per output element
  std::vector<std::size_t> b_index;
  bool same = false;
};

Broadcast broadcast(const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  bc.out.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw DimensionError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    bc.out[d] = std::max(pa[d], pb[d]);
  }
  std::vector<std::size_t> sa(r), sb(r);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = r; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : acc_a;
    sb[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = numel(bc.out);
  bc.a_index.resize(n);
  bc.b_index.resize(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    bc.a_index[o] = ia;
    bc.b_index[o] = ib;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      ia += sa[d];
      ib += sb[d];
      if (counter[d] < bc.out[d]) break;
      ia -= sa[d] * counter[d];
      ib -= sb[d] * counter[d];
      counter[d] = 0;
    }
  }
  return bc;
}

enum class Arith { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, Arith kind) {
  auto bc = std::make_shared<Broadcast>(broadcast(a.shape(), b.shape()));
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t n = numel(bc->out);
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) {
    const double x = av[bc->same ? o : bc->a_index[o]];
    const double y = bv[bc->same ? o : bc->b_index[o]];
    switch (kind) {
      case Arith::Add: out[o] = x + y; break;
      case Arith::Sub: out[o] = x - y; break;
      case Arith::Mul: out[o] = x * y; break;
      case Arith::Div: out[o] = x / y; break;
    }
  }
  return make_op(bc->out, std::move(out), {a, b}, [bc, kind](Node& self) {
    const auto& g = self.grad;
    const auto& x = input_value(self, 0);
    const auto& y = input_value(self, 1);
    auto* ga = input_grad(self, 0);
    auto* gb = input_grad(self, 1);
    for (std::size_t o = 0; o < g.size(); ++o) {
      const std::size_t i = bc->same ? o : bc->a_index[o];
      const std::size_t j = bc->same ? o : bc->b_index[o];
      switch (kind) {
        case Arith::Add:
          if (ga) (*ga)[i] += g[o];
          if (gb) (*gb)[j] += g[o];
          break;
        case Arith::Sub:
          if (ga) (*ga)[i] += g[o];
          if (gb) (*gb)[j] -= g[o];
          break;
        case Arith::Mul:
          if (ga) (*ga)[i] += g[o] * y[j];
          if (gb) (*gb)[j] += g[o] * x[i];
          break;
        case Arith::Div:
          if (ga) (*ga)[i] += g[o] / y[j];
          if (gb) (*gb)[j] -= g[o] * x[i] / (y[j] * y[j]);
          break;
      }
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_op(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& xin = input_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      (*gx)[i] += self.grad[i] * deriv(xin[i], self.value[i]);
    }
  });
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Arith::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Arith::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Arith::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, Arith::Div); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op({1}, {s}, {x}, [](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (auto& g : *gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MatrixMap(out.data(), ix(m), ix(n)).noalias() = a.matrix() * b.matrix();
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMatrixMap g(self.grad.data(), ix(m), ix(n));
    if (auto* ga = input_grad(self, 0)) {
      MatrixMap(ga->data(), ix(m), ix(k)).noalias() +=
          g * ConstMatrixMap(input_value(self, 1).data(), ix(k), ix(n)).transpose();
    }
    if (auto* gb = input_grad(self, 1)) {
      MatrixMap(gb->data(), ix(k), ix(n)).noalias() +=
          ConstMatrixMap(input_value(self, 0).data(), ix(m), ix(k)).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  MatrixMap(out.data(), ix(c), ix(r)) = x.matrix().transpose();
  return make_op({c, r}, std::move(out), {x}, [r, c](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      MatrixMap(gx->data(), ix(r), ix(c)) += ConstMatrixMap(self.grad.data(), ix(c), ix(r)).transpose();
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return make_op(std::move(shape), x.to_vector(), {x}, [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + to_string(b.shape()) + " vs weight " + to_string(w.shape()));
  }
  std::vector<double> out(n * out_dim);
  MatrixMap y(out.data(), ix(n), ix(out_dim));
  y.noalias() = x.matrix() * w.matrix().transpose();
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), ix(out_dim));
  }
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op({n, out_dim}, std::move(out), std::move(inputs), [n, in, out_dim, has_bias](Node& self) {
    ConstMatrixMap g(self.grad.data(), ix(n), ix(out_dim));
    ConstMatrixMap xv(input_value(self, 0).data(), ix(n), ix(in));
    ConstMatrixMap wv(input_value(self, 1).data(), ix(out_dim), ix(in));
    if (auto* gx = input_grad(self, 0)) MatrixMap(gx->data(), ix(n), ix(in)).noalias() += g * wv;
    if (auto* gw = input_grad(self, 1)) MatrixMap(gw->data(), ix(out_dim), ix(in)).noalias() += g.transpose() * xv;
    if (has_bias) {
      if (auto* gb = input_grad(self, 2)) {
        Eigen::Map<Eigen::RowVectorXd>(gb->data(), ix(out_dim)) += g.colwise().sum();
      }
    }
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t f = x.shape().back();
  const std::size_t rows = x.size() / f;
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * f;
    double* o = out.data() + r * f;
    const double mx = *std::max_element(in, in + f);
    double total = 0.0;
    for (std::size_t j = 0; j < f; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < f; ++j) o[j] /= total;
  }
  return make_op(x.shape(), std::move(out), {x}, [rows, f](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * f;
      const double* g = self.grad.data() + r * f;
      double dot = 0.0;
      for (std::size_t j = 0; j < f; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < f; ++j) (*gx)[r * f + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t f = x.shape().back();
  const std::size_t rows = x.size() / f;
  const bool affine = gamma.defined();
  if (affine && (gamma.size() != f || !beta.defined() || beta.size() != f)) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(f) + " entries");
  }
  auto normalized = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * f;
    double mu = 0.0;
    for (std::size_t j = 0; j < f; ++j) mu += in[j];
    mu /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t j = 0; j < f; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(f);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = s;
    for (std::size_t j = 0; j < f; ++j) {
      const double y = (in[j] - mu) * s;
      (*normalized)[r * f + j] = y;
      out[r * f + j] = affine ? y * gamma.at(j) + beta.at(j) : y;
    }
  }
  std::vector<Tensor> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_op(x.shape(), std::move(out), std::move(inputs), [rows, f, affine, normalized, inv_std](Node& self) {
    const auto& yhat = *normalized;
    auto* gx = input_grad(self, 0);
    std::vector<double>* gg = affine ? input_grad(self, 1) : nullptr;
    std::vector<double>* gbeta = affine ? input_grad(self, 2) : nullptr;
    const std::vector<double>* gamma_v = affine ? &input_value(self, 1) : nullptr;
    std::vector<double> dy(f);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_dy = 0.0, mean_dy_y = 0.0;
      for (std::size_t j = 0; j < f; ++j) {
        const double g = self.grad[r * f + j];
        if (gg) (*gg)[j] += g * yhat[r * f + j];
        if (gbeta) (*gbeta)[j] += g;
        dy[j] = affine ? g * (*gamma_v)[j] : g;
        mean_dy += dy[j];
        mean_dy_y += dy[j] * yhat[r * f + j];
      }
      if (!gx) continue;
      mean_dy /= static_cast<double>(f);
      mean_dy_y /= static_cast<double>(f);
      for (std::size_t j = 0; j < f; ++j) {
        (*gx)[r * f + j] += (*inv_std)[r] * (dy[j] - mean_dy - yhat[r * f + j] * mean_dy_y);
      }
    }
  });
}

Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
  require_rank(x, 2, "batch_norm_1d");
  const std::size_t n = x.dim(0), f = x.dim(1);
  if (state.running_mean.size() != f || gamma.size() != f || beta.size() != f) {
    throw DimensionError("batch_norm_1d: " + std::to_string(f) + " features vs state/affine of " +
                         std::to_string(state.running_mean.size()));
  }
  const auto xv = x.data();
  std::vector<double> mu(f, 0.0), inv_std(f, 0.0);
  if (mode == Mode::Train) {
    if (n < 2) throw DegenerateBatchError("batch_norm_1d: train mode needs at least 2 samples");
    std::vector<double> var(f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) mu[j] += xv[i * f + j];
    for (auto& m : mu) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) var[j] += (xv[i * f + j] - mu[j]) * (xv[i * f + j] - mu[j]);
    for (std::size_t j = 0; j < f; ++j) {
      const double biased = var[j] / static_cast<double>(n);
      inv_std[j] = 1.0 / std::sqrt(biased + state.eps);
      const double unbiased = var[j] / static_cast<double>(n - 1);
      state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mu[j];
      state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  auto normalized = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double y = (xv[i * f + j] - mu[j]) * inv_std[j];
      (*normalized)[i * f + j] = y;
      out[i * f + j] = y * gamma.at(j) + beta.at(j);
    }
  }
  const bool batch_stats = mode == Mode::Train;
  return make_op({n, f}, std::move(out), {x, gamma, beta},
                 [n, f, batch_stats, normalized, inv_std = std::move(inv_std)](Node& self) {
                   const auto& yhat = *normalized;
                   const auto& gam = input_value(self, 1);
                   auto* gx = input_grad(self, 0);
                   auto* gg = input_grad(self, 1);
                   auto* gb = input_grad(self, 2);
                   std::vector<double> mean_dy(f, 0.0), mean_dy_y(f, 0.0);
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < f; ++j) {
                       const double g = self.grad[i * f + j];
                       if (gg) (*gg)[j] += g * yhat[i * f + j];
                       if (gb) (*gb)[j] += g;
                       mean_dy[j] += g * gam[j];
                       mean_dy_y[j] += g * gam[j] * yhat[i * f + j];
                     }
                   }
                   if (!gx) return;
                   for (std::size_t j = 0; j < f; ++j) {
                     mean_dy[j] /= static_cast<double>(n);
                     mean_dy_y[j] /= static_cast<double>(n);
                   }
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < f; ++j) {
                       const double dy = self.grad[i * f + j] * gam[j];
                       (*gx)[i * f + j] += batch_stats
                                               ? inv_std[j] * (dy - mean_dy[j] - yhat[i * f + j] * mean_dy_y[j])
                                               : inv_std[j] * dy;
                     }
                   }
                 });
}

Tensor dropout(const Tensor& x, double p, Mode mode, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0,1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return x;
  CounterRng rng(seed, "dropout");
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.next_double() >= p ? keep_scale : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  return make_op(x.shape(), std::move(out), {x}, [mask](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * (*mask)[i];
    }
  });
}

Tensor concat_lastdim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_lastdim: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l(p.shape().begin(), p.shape().end() - 1);
    if (l != lead) {
      throw DimensionError("concat_lastdim: " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const std::size_t rows = numel(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_op(std::move(shape), std::move(out), {parts.begin(), parts.end()}, [rows, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* g = input_grad(self, k)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) (*g)[r * widths[k] + j] += self.grad[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw DimensionError("concat_rows: " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    }
    rows += p.dim(0);
    sizes.push_back(p.size());
  }
  std::vector<double> out;
  out.reserve(rows * numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_op(std::move(shape), std::move(out), {parts.begin(), parts.end()}, [sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (auto* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < sizes[k]; ++i) (*g)[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t length) {
  const std::size_t f = x.shape().back();
  if (length == 0 || start + length > f) {
    throw DimensionError("slice_lastdim [" + std::to_string(start) + ", +" + std::to_string(length) + ") of " +
                         to_string(x.shape()));
  }
  const std::size_t rows = x.size() / f;
  std::vector<double> out(rows * length);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * f + start, length, out.data() + r * length);
  Shape shape = x.shape();
  shape.back() = length;
  return make_op(std::move(shape), std::move(out), {x}, [rows, f, start, length](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < length; ++j) (*gx)[r * f + start + j] += self.grad[r * length + j];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t length) {
  if (length == 0 || start + length > x.dim(0)) {
    throw DimensionError("slice_rows [" + std::to_string(start) + ", +" + std::to_string(length) + ") of " +
                         to_string(x.shape()));
  }
  std::vector<std::size_t> rows(length);
  for (std::size_t i = 0; i < length; ++i) rows[i] = start + i;
  return index_rows(x, rows);
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DimensionError("index_rows: empty index list");
  const std::size_t stride = x.size() / x.dim(0);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * stride);
  const auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.dim(0)) {
      throw DimensionError("index_rows: row " + std::to_string(idx[i]) + " out of " + to_string(x.shape()));
    }
    std::copy_n(xv.data() + idx[i] * stride, stride, out.data() + i * stride);
  }
  Shape shape = x.shape();
  shape[0] = idx.size();
  return make_op(std::move(shape), std::move(out), {x}, [idx, stride](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < stride; ++j) (*gx)[idx[i] * stride + j] += self.grad[i * stride + j];
    }
  });
}

namespace {

// cols[ci*K + k, t] = x[ci, t - (K-1-k)*d]
RowMatrix causal_cols(const double* x, std::size_t cin, std::size_t t_len, std::size_t k_len, std::size_t d) {
  RowMatrix cols = RowMatrix::Zero(ix(cin * k_len), ix(t_len));
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t k = 0; k < k_len; ++k) {
      const std::size_t shift = (k_len - 1 - k) * d;
      for (std::size_t t = shift; t < t_len; ++t) cols(ix(ci * k_len + k), ix(t)) = x[ci * t_len + t - shift];
    }
  }
  return cols;
}

struct Conv2dGeometry {
  std::size_t cin, h, w, k, stride, pad, ho, wo;
};

RowMatrix im2col(const double* x, const Conv2dGeometry& g) {
  RowMatrix cols = RowMatrix::Zero(ix(g.cin * g.k * g.k), ix(g.ho * g.wo));
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const auto row = ix((c * g.k + ki) * g.k + kj);
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            cols(row, ix(oi * g.wo + oj)) = x[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)];
          }
        }
      }
  return cols;
}

void col2im_add(const RowMatrix& cols, double* dx, const Conv2dGeometry& g) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const auto row = ix((c * g.k + ki) * g.k + kj);
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)] += cols(row, ix(oi * g.wo + oj));
          }
        }
      }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t dilation) {
  require_rank(x, 2, "conv1d");
  require_rank(w, 3, "conv1d");
  if (dilation < 1) throw ContractError("conv1d: dilation must be >= 1");
  if (w.dim(1) != x.dim(0)) {
    throw DimensionError("conv1d: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  const std::size_t cin = x.dim(0), t_len = x.dim(1), cout = w.dim(0), k_len = w.dim(2);
  const RowMatrix cols = causal_cols(x.data().data(), cin, t_len, k_len, dilation);
  ConstMatrixMap wm(w.data().data(), ix(cout), ix(cin * k_len));
  std::vector<double> out(cout * t_len);
  MatrixMap(out.data(), ix(cout), ix(t_len)).noalias() = wm * cols;
  return make_op({cout, t_len}, std::move(out), {x, w}, [cin, t_len, cout, k_len, dilation](Node& self) {
    ConstMatrixMap g(self.grad.data(), ix(cout), ix(t_len));
    ConstMatrixMap wm(input_value(self, 1).data(), ix(cout), ix(cin * k_len));
    if (auto* gw = input_grad(self, 1)) {
      const RowMatrix cols = causal_cols(input_value(self, 0).data(), cin, t_len, k_len, dilation);
      MatrixMap(gw->data(), ix(cout), ix(cin * k_len)).noalias() += g * cols.transpose();
    }
    if (auto* gx = input_grad(self, 0)) {
      const RowMatrix dcols = wm.transpose() * g;
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t k = 0; k < k_len; ++k) {
          const std::size_t shift = (k_len - 1 - k) * dilation;
          for (std::size_t t = shift; t < t_len; ++t) (*gx)[ci * t_len + t - shift] += dcols(ix(ci * k_len + k), ix(t));
        }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  const std::size_t n = x.dim(0), cout = w.dim(0), k = w.dim(2);
  Conv2dGeometry geo{x.dim(1), x.dim(2), x.dim(3), k, stride, padding, 0, 0};
  if (geo.h + 2 * padding < k || geo.w + 2 * padding < k) {
    throw DimensionError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  }
  geo.ho = (geo.h + 2 * padding - k) / stride + 1;
  geo.wo = (geo.w + 2 * padding - k) / stride + 1;
  const std::size_t in_plane = geo.cin * geo.h * geo.w, out_plane = cout * geo.ho * geo.wo;
  ConstMatrixMap wm(w.data().data(), ix(cout), ix(geo.cin * k * k));
  std::vector<double> out(n * out_plane);
  for (std::size_t b = 0; b < n; ++b) {
    MatrixMap(out.data() + b * out_plane, ix(cout), ix(geo.ho * geo.wo)).noalias() =
        wm * im2col(x.data().data() + b * in_plane, geo);
  }
  return make_op({n, cout, geo.ho, geo.wo}, std::move(out), {x, w}, [n, cout, geo, in_plane, out_plane](Node& self) {
    const auto kk = ix(geo.cin * geo.k * geo.k);
    ConstMatrixMap wm(input_value(self, 1).data(), ix(cout), kk);
    auto* gw = input_grad(self, 1);
    auto* gx = input_grad(self, 0);
    for (std::size_t b = 0; b < n; ++b) {
      ConstMatrixMap g(self.grad.data() + b * out_plane, ix(cout), ix(geo.ho * geo.wo));
      if (gw) {
        MatrixMap(gw->data(), ix(cout), kk).noalias() +=
            g * im2col(input_value(self, 0).data() + b * in_plane, geo).transpose();
      }
      if (gx) {
        const RowMatrix dcols = wm.transpose() * g;
        col2im_add(dcols, gx->data() + b * in_plane, geo);
      }
    }
  });
}

Tensor conv2d_1x1(const Tensor& x, const Tensor& w) {
  require_rank(w, 2, "conv2d_1x1");
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("conv2d_1x1: expected [C,H,W] or [N,C,H,W], got " + to_string(x.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t cin = x.dim(batched ? 1 : 0);
  const std::size_t pixels = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
  if (w.dim(1) != cin) {
    throw DimensionError("conv2d_1x1: input channels " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  const std::size_t cout = w.dim(0);
  std::vector<double> out(n * cout * pixels);
  for (std::size_t b = 0; b < n; ++b) {
    MatrixMap(out.data() + b * cout * pixels, ix(cout), ix(pixels)).noalias() =
        w.matrix() * ConstMatrixMap(x.data().data() + b * cin * pixels, ix(cin), ix(pixels));
  }
  Shape shape = x.shape();
  shape[batched ? 1 : 0] = cout;
  return make_op(std::move(shape), std::move(out), {x, w}, [n, cin, cout, pixels](Node& self) {
    ConstMatrixMap wm(input_value(self, 1).data(), ix(cout), ix(cin));
    auto* gx = input_grad(self, 0);
    auto* gw = input_grad(self, 1);
    for (std::size_t b = 0; b < n; ++b) {
      ConstMatrixMap g(self.grad.data() + b * cout * pixels, ix(cout), ix(pixels));
      if (gx) MatrixMap(gx->data() + b * cin * pixels, ix(cin), ix(pixels)).noalias() += wm.transpose() * g;
      if (gw) {
        MatrixMap(gw->data(), ix(cout), ix(cin)).noalias() +=
            g * ConstMatrixMap(input_value(self, 0).data() + b * cin * pixels, ix(cin), ix(pixels)).transpose();
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("global_avg_pool: expected [C,H,W] or [N,C,H,W], got " + to_string(x.shape()));
  }
  const std::size_t pixels = x.dim(x.rank() - 1) * x.dim(x.rank() - 2);
  const std::size_t planes = x.size() / pixels;
  std::vector<double> out(planes, 0.0);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < pixels; ++i) s += xv[p * pixels + i];
    out[p] = s / static_cast<double>(pixels);
  }
  Shape shape(x.shape().begin(), x.shape().end() - 2);
  return make_op(std::move(shape), std::move(out), {x}, [pixels, planes](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      const double inv = 1.0 / static_cast<double>(pixels);
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < pixels; ++i) (*gx)[p * pixels + i] += self.grad[p] * inv;
    }
  });
}

}  // namespace vafuse
