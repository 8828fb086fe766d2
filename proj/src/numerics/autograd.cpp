// Copyright 2026 The avfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "avfuse/numerics/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "avfuse/errors.hpp"
#include "avfuse/numerics/kernels.hpp"

namespace avfuse {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Gradients::of(const Var& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw UsageError("no gradient recorded for this variable");
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericalError("non-finite value in leaf tensor");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by " + std::string(op));
  }
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) n.requires_grad = n.requires_grad || in.requires_grad();
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_sink(const Var& v) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

Gradients Tape::backward(const Var& output) {
  if (output.tape_ != this) throw UsageError("backward: variable belongs to another tape");
  if (output.value().numel() != 1) {
    throw UsageError("backward: output must be a scalar, got shape " +
                     shape_to_string(output.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (Tensor* g = grad_sink(output)) (*g)[0] = 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.is_leaf || !n.requires_grad) continue;
    out.grads_.emplace(i, n.has_grad ? std::move(n.grad) : Tensor(n.value.shape()));
    n.has_grad = false;
  }
  return out;
}

namespace ag {

namespace {

void require_same_shape(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void axpy(Tensor& dst, const Tensor& src, double alpha = 1.0) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += alpha * src[i];
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tensor out = avfuse::matmul(a.value(), b.value());
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (Tensor* ga = t.grad_sink(a)) {
      kernels::gemm_nt(g.data().data(), bv.data().data(), ga->data().data(), m, n, k);
    }
    if (Tensor* gb = t.grad_sink(b)) {
      kernels::gemm_tn(av.data().data(), g.data().data(), gb->data().data(), k, m, n);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (weight.value().rank() != 2 || bias.value().numel() != weight.shape()[1]) {
    throw DimensionError("linear: weight " + shape_to_string(weight.shape()) + " and bias " +
                         shape_to_string(bias.shape()) + " do not agree");
  }
  return add_bias(matmul(x, weight), bias);
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  axpy(out, b.value());
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) axpy(*ga, g);
    if (Tensor* gb = t.grad_sink(b)) axpy(*gb, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  axpy(out, b.value(), -1.0);
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) axpy(*ga, g);
    if (Tensor* gb = t.grad_sink(b)) axpy(*gb, g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(a)) {
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_sink(b)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t n = x.value().cols();
  if (bias.value().numel() != n) {
    throw DimensionError("add_bias: bias of " + std::to_string(bias.value().numel()) +
                         " values for rows of width " + std::to_string(n));
  }
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.row(r);
    for (std::size_t j = 0; j < n; ++j) o[j] += bv[j];
  }
  return x.tape().record("add_bias", std::move(out), {x, bias},
                         [x, bias, n](Tape& t, const Tensor& g) {
                           if (Tensor* gx = t.grad_sink(x)) axpy(*gx, g);
                           if (Tensor* gb = t.grad_sink(bias)) {
                             for (std::size_t r = 0; r < g.rows(); ++r) {
                               const double* gr = g.row(r);
                               for (std::size_t j = 0; j < n; ++j) (*gb)[j] += gr[j];
                             }
                           }
                         });
}

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= c;
  return x.tape().record("scale", std::move(out), {x}, [x, c](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) axpy(*gx, g, c);
  });
}

Var one_minus(const Var& x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 - xv[i];
  return x.tape().record("one_minus", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) axpy(*gx, g, -1.0);
  });
}

Var mul_const(const Var& x, const Tensor& c) {
  if (x.shape() != c.shape()) {
    throw DimensionError("mul_const: shape mismatch " + shape_to_string(x.shape()) + " vs " +
                         shape_to_string(c.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
  return x.tape().record("mul_const", std::move(out), {x}, [x, c](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * c[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = avfuse::sigmoid(x.value());
  auto saved = std::make_shared<Tensor>(out);
  return x.tape().record("sigmoid", std::move(out), {x}, [x, saved](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) {
      const Tensor& s = *saved;
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * s[i] * (1.0 - s[i]);
    }
  });
}

Var gelu(const Var& x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = avfuse::gelu(xv[i]);
  return x.tape().record("gelu", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) {
      const Tensor& xv = x.value();
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * avfuse::gelu_grad(xv[i]);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tensor out = avfuse::layer_norm(x.value(), gain.value(), bias.value(), eps);
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, bias}, [x, gain, bias, eps](Tape& t, const Tensor& g) {
        const Tensor& xv = x.value();
        const Tensor& gv = gain.value();
        const std::size_t d = xv.cols();
        Tensor* gx = t.grad_sink(x);
        Tensor* gg = t.grad_sink(gain);
        Tensor* gb = t.grad_sink(bias);
        std::vector<double> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
          const double* in = xv.row(r);
          const double* gr = g.row(r);
          double mean = 0.0;
          for (std::size_t j = 0; j < d; ++j) mean += in[j];
          mean /= static_cast<double>(d);
          double var = 0.0;
          for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
          var /= static_cast<double>(d);
          const double inv = 1.0 / std::sqrt(var + eps);
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (in[j] - mean) * inv;
            dxhat[j] = gr[j] * gv[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[j];
            if (gg) (*gg)[j] += gr[j] * xhat[j];
            if (gb) (*gb)[j] += gr[j];
          }
          if (!gx) continue;
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          double* dx = gx->row(r);
          for (std::size_t j = 0; j < d; ++j) {
            dx[j] += inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
          }
        }
      });
}

Var softmax_lastdim(const Var& x) {
  Tensor out = avfuse::softmax_lastdim(x.value());
  auto saved = std::make_shared<Tensor>(out);
  return x.tape().record("softmax", std::move(out), {x}, [x, saved](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(x);
    if (!gx) return;
    const Tensor& p = *saved;
    const std::size_t n = p.cols();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const double* pr = p.row(r);
      const double* gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += pr[j] * gr[j];
      double* dx = gx->row(r);
      for (std::size_t j = 0; j < n; ++j) dx[j] += pr[j] * (gr[j] - dot);
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) {
      for (double& v : gx->data()) v += g[0];
    }
  });
}

Var weighted_sum(const Var& x, const Tensor& w) {
  if (x.value().numel() != w.numel()) {
    throw DimensionError("weighted_sum: " + shape_to_string(x.shape()) + " vs " +
                         shape_to_string(w.shape()));
  }
  double s = 0.0;
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i] * w[i];
  return x.tape().record("weighted_sum", Tensor::scalar(s), {x}, [x, w](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(x)) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g[0] * w[i];
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts differ " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out = Tensor::matrix(r, ca + cb);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(av.row(i), ca, out.row(i));
    std::copy_n(bv.row(i), cb, out.row(i) + ca);
  }
  return a.tape().record("concat_cols", std::move(out), {a, b},
                         [a, b, r, ca, cb](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_sink(a);
                           Tensor* gb = t.grad_sink(b);
                           for (std::size_t i = 0; i < r; ++i) {
                             const double* gr = g.row(i);
                             if (ga) {
                               double* d = ga->data().data() + i * ca;
                               for (std::size_t j = 0; j < ca; ++j) d[j] += gr[j];
                             }
                             if (gb) {
                               double* d = gb->data().data() + i * cb;
                               for (std::size_t j = 0; j < cb; ++j) d[j] += gr[ca + j];
                             }
                           }
                         });
}

Var concat_rows(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("concat_rows: widths differ " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t ra = av.rows(), rb = bv.rows(), c = av.cols();
  std::vector<double> data(av.storage());
  data.insert(data.end(), bv.storage().begin(), bv.storage().end());
  Tensor out(Shape{ra + rb, c}, std::move(data));
  return a.tape().record("concat_rows", std::move(out), {a, b},
                         [a, b, ra, c](Tape& t, const Tensor& g) {
                           if (Tensor* ga = t.grad_sink(a)) {
                             for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g[i];
                           }
                           if (Tensor* gb = t.grad_sink(b)) {
                             const std::size_t off = ra * c;
                             for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] += g[off + i];
                           }
                         });
}

Var gather_rows(const Var& x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of " +
                           std::to_string(xv.rows()) + " rows");
    }
    std::copy_n(xv.row(index[i]), c, out.row(i));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().record("gather_rows", std::move(out), {x},
                         [x, idx = std::move(idx), c](Tape& t, const Tensor& g) {
                           Tensor* gx = t.grad_sink(x);
                           if (!gx) return;
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             double* d = gx->row(idx[i]);
                             const double* gr = g.row(i);
                             for (std::size_t j = 0; j < c; ++j) d[j] += gr[j];
                           }
                         });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must lie in [0, 1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.shape());
  const double s = 1.0 / (1.0 - p);
  for (double& m : mask.data()) m = keep(rng) ? s : 0.0;
  return mul_const(x, mask);
}

}  // namespace ag

}  // namespace avfuse
