#include "fedsim/tensor.h"

#include <cmath>
#include <cstdio>
#include <string>
#include <unordered_set>
#include <utility>

namespace fedsim {

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_rank2(const Tensor& t, const char* who) {
  if (!t.defined() || t.shape().size() != 2) {
    throw ShapeError(std::string(who) + ": rank-2 tensor required, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void ensure_grad(detail::TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.numel(), 0.0);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor op_result(Shape shape, std::vector<double> values,
                 std::vector<std::shared_ptr<detail::TensorNode>> parents,
                 std::function<void(detail::TensorNode&)> backprop);

// --- construction ----------------------------------------------------------

Tensor Tensor::make(Shape shape, std::vector<double> values) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::make_shared<std::vector<double>>(std::move(values));
  if (node->values->size() != shape_numel(node->shape)) {
    throw ShapeError("tensor data length does not match shape " +
                     shape_str(node->shape));
  }
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  Tensor t = make(std::move(shape), std::vector<double>(n, value));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t = make(std::move(shape), std::move(data));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_storage(Shape shape, std::shared_ptr<std::vector<double>> storage,
                            bool requires_grad) {
  if (!storage) throw UsageError("from_storage: null storage");
  if (storage->size() != shape_numel(shape)) {
    throw ShapeError("from_storage: buffer length does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(storage);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return shape().empty() ? 1 : shape_numel(shape()); }

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) throw IndexError("dim index out of range");
  return s[i];
}

const std::vector<double>& Tensor::data() const {
  if (!node_) throw UsageError("data() on undefined tensor");
  return *node_->values;
}

std::vector<double>& Tensor::data() {
  if (!node_) throw UsageError("data() on undefined tensor");
  return *node_->values;
}

const std::vector<double>* Tensor::grad() const {
  if (!node_ || node_->grad.empty()) return nullptr;
  return &node_->grad;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on non-scalar tensor");
  return data()[0];
}

Tensor op_result(Shape shape, std::vector<double> values,
                 std::vector<std::shared_ptr<detail::TensorNode>> parents,
                 std::function<void(detail::TensorNode&)> backprop) {
  Tensor t = Tensor::make(std::move(shape), std::move(values));
  bool needs = false;
  for (const auto& p : parents) {
    if (p && p->requires_grad) {
      needs = true;
      break;
    }
  }
  if (needs) {
    t.node_->requires_grad = true;
    t.node_->parents = std::move(parents);
    t.node_->backprop = std::move(backprop);
  }
  return t;
}

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul lhs");
  require_rank2(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  {
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = out.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        const double* bp = bv + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  }
  return op_result(
      {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
      [m, k, n](detail::TensorNode& node) {
        const double* g = node.grad.data();
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const double* av = pa.values->data();
        const double* bv = pb.values->data();
        if (pa.requires_grad) {
          ensure_grad(pa);
          double* ga = pa.grad.data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* gi = g + i * n;
              const double* bp = bv + p * n;
              for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (pb.requires_grad) {
          ensure_grad(pb);
          double* gb = pb.grad.data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* gi = g + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              double* gbp = gb + p * n;
              for (std::size_t j = 0; j < n; ++j) gbp[j] += aip * gi[j];
            }
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];
  return op_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                   [n](detail::TensorNode& node) {
                     for (int side = 0; side < 2; ++side) {
                       auto& p = *node.parents[side];
                       if (!p.requires_grad) continue;
                       ensure_grad(p);
                       for (std::size_t i = 0; i < n; ++i) p.grad[i] += node.grad[i];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  return op_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                   [n](detail::TensorNode& node) {
                     auto& pa = *node.parents[0];
                     auto& pb = *node.parents[1];
                     if (pa.requires_grad) {
                       ensure_grad(pa);
                       for (std::size_t i = 0; i < n; ++i)
                         pa.grad[i] += node.grad[i] * (*pb.values)[i];
                     }
                     if (pb.requires_grad) {
                       ensure_grad(pb);
                       for (std::size_t i = 0; i < n; ++i)
                         pb.grad[i] += node.grad[i] * (*pa.values)[i];
                     }
                   });
}

Tensor scale(const Tensor& a, double c) {
  if (!a.defined()) throw UsageError("scale: undefined tensor");
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
  return op_result(a.shape(), std::move(out), {a.node_ptr()},
                   [n, c](detail::TensorNode& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     ensure_grad(p);
                     for (std::size_t i = 0; i < n; ++i) p.grad[i] += c * node.grad[i];
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias input");
  if (!bias.defined() || bias.shape().size() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias must be [cols] of input " +
                     shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x.data()[i * n + j] + bias.data()[j];
  return op_result({m, n}, std::move(out), {x.node_ptr(), bias.node_ptr()},
                   [m, n](detail::TensorNode& node) {
                     auto& px = *node.parents[0];
                     auto& pb = *node.parents[1];
                     if (px.requires_grad) {
                       ensure_grad(px);
                       for (std::size_t i = 0; i < m * n; ++i)
                         px.grad[i] += node.grad[i];
                     }
                     if (pb.requires_grad) {
                       ensure_grad(pb);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           pb.grad[j] += node.grad[i * n + j];
                     }
                   });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int32_t>& index) {
  require_rank2(table, "gather_rows table");
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(index[i]) +
                       " out of range [0," + std::to_string(rows) + ") at " +
                       std::to_string(i));
    }
  }
  const std::size_t m = index.size();
  std::vector<double> out(m * cols);
  for (std::size_t i = 0; i < m; ++i) {
    const double* src = table.data().data() + static_cast<std::size_t>(index[i]) * cols;
    double* dst = out.data() + i * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c];
  }
  auto idx = index;  // keep a copy alive for backward
  return op_result({m, cols}, std::move(out), {table.node_ptr()},
                   [idx = std::move(idx), cols](detail::TensorNode& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     ensure_grad(p);
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                       double* dst =
                           p.grad.data() + static_cast<std::size_t>(idx[i]) * cols;
                       const double* g = node.grad.data() + i * cols;
                       for (std::size_t c = 0; c < cols; ++c) dst[c] += g[c];
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (!gain.defined() || gain.shape() != Shape{n} || !bias.defined() ||
      bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/bias must be [cols]");
  }
  if (n < 2) throw ShapeError("layer_norm: needs at least 2 columns");
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  const double* xv = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xv + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xi[j] - mean) * inv;
      xhat[i * n + j] = xh;
      out[i * n + j] = gain.data()[j] * xh + bias.data()[j];
    }
  }
  return op_result(
      {m, n}, std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [m, n, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::TensorNode& node) {
        auto& px = *node.parents[0];
        auto& pg = *node.parents[1];
        auto& pb = *node.parents[2];
        const double* g = node.grad.data();
        const double* gainv = pg.values->data();
        if (pg.requires_grad) {
          ensure_grad(pg);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              pg.grad[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (pb.requires_grad) {
          ensure_grad(pb);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pb.grad[j] += g[i * n + j];
        }
        if (px.requires_grad) {
          ensure_grad(px);
          for (std::size_t i = 0; i < m; ++i) {
            const double* gi = g + i * n;
            const double* xh = xhat.data() + i * n;
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = gi[j] * gainv[j];
              s1 += dxh;
              s2 += dxh * xh[j];
            }
            s1 /= static_cast<double>(n);
            s2 /= static_cast<double>(n);
            const double inv = inv_std[i];
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = gi[j] * gainv[j];
              px.grad[i * n + j] += inv * (dxh - s1 - xh[j] * s2);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  if (!x.defined()) throw UsageError("gelu: undefined tensor");
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const double* xv = x.data().data();
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  }
  return op_result(
      x.shape(), std::move(out), {x.node_ptr()}, [n](detail::TensorNode& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        const double* xv = p.values->data();
        for (std::size_t i = 0; i < n; ++i) {
          const double x = xv[i];
          const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
          p.grad[i] += node.grad[i] * (cdf + x * pdf);
        }
      });
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) throw UsageError("sum: undefined tensor");
  const std::size_t n = x.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x.data()[i];
  return op_result({1}, {acc}, {x.node_ptr()}, [n](detail::TensorNode& node) {
    auto& p = *node.parents[0];
    if (!p.requires_grad) return;
    ensure_grad(p);
    const double g = node.grad[0];
    for (std::size_t i = 0; i < n; ++i) p.grad[i] += g;
  });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t batch, std::size_t seq, std::size_t n_heads) {
  require_rank2(q, "attention q");
  require_same_shape(q, k, "attention q/k");
  require_same_shape(q, v, "attention q/v");
  const std::size_t n = q.dim(0), d = q.dim(1);
  if (n != batch * seq) throw ShapeError("attention: rows != batch*seq");
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: d_model not divisible by n_heads");
  }
  const std::size_t dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[(b*H + h)*seq*seq + i*seq + j], only j <= i populated
  std::vector<double> probs(batch * n_heads * seq * seq, 0.0);
  std::vector<double> out(n * d, 0.0);
  const double* qv = q.data().data();
  const double* kv = k.data().data();
  const double* vv = v.data().data();
  std::vector<double> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t col0 = h * dh;
      double* pr = probs.data() + (b * n_heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = qv + (b * seq + i) * d + col0;
        double row_max = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = kv + (b * seq + j) * d + col0;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= inv_scale;
          scores[j] = s;
          if (s > row_max) row_max = s;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double e = std::exp(scores[j] - row_max);
          scores[j] = e;
          denom += e;
        }
        double* oi = out.data() + (b * seq + i) * d + col0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double p = scores[j] / denom;
          pr[i * seq + j] = p;
          const double* vj = vv + (b * seq + j) * d + col0;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  return op_result(
      {n, d}, std::move(out), {q.node_ptr(), k.node_ptr(), v.node_ptr()},
      [batch, seq, n_heads, dh, d, inv_scale,
       probs = std::move(probs)](detail::TensorNode& node) {
        auto& pq = *node.parents[0];
        auto& pk = *node.parents[1];
        auto& pv = *node.parents[2];
        // The model always differentiates all three; handle any subset anyway.
        const bool nq = pq.requires_grad, nk = pk.requires_grad, nv = pv.requires_grad;
        if (nq) ensure_grad(pq);
        if (nk) ensure_grad(pk);
        if (nv) ensure_grad(pv);
        const double* g = node.grad.data();
        const double* qv = pq.values->data();
        const double* kv = pk.values->data();
        const double* vv = pv.values->data();
        std::vector<double> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t col0 = h * dh;
            const double* pr = probs.data() + (b * n_heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const double* gi = g + (b * seq + i) * d + col0;
              // dV and dP
              double dot = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                const double p = pr[i * seq + j];
                const double* vj = vv + (b * seq + j) * d + col0;
                double dpj = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dpj += gi[c] * vj[c];
                dp[j] = dpj;
                dot += p * dpj;
                if (nv) {
                  double* gv = pv.grad.data() + (b * seq + j) * d + col0;
                  for (std::size_t c = 0; c < dh; ++c) gv[c] += p * gi[c];
                }
              }
              // dS = P * (dP - sum(P*dP)); then into q, k
              for (std::size_t j = 0; j <= i; ++j) {
                const double ds = pr[i * seq + j] * (dp[j] - dot) * inv_scale;
                const double* kj = kv + (b * seq + j) * d + col0;
                const double* qi = qv + (b * seq + i) * d + col0;
                if (nq) {
                  double* gq = pq.grad.data() + (b * seq + i) * d + col0;
                  for (std::size_t c = 0; c < dh; ++c) gq[c] += ds * kj[c];
                }
                if (nk) {
                  double* gk = pk.grad.data() + (b * seq + j) * d + col0;
                  for (std::size_t c = 0; c < dh; ++c) gk[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::int32_t>& targets) {
  require_rank2(logits, "cross_entropy logits");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: targets length " + std::to_string(targets.size()) +
                     " != rows " + std::to_string(n));
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= 0) {
      if (static_cast<std::size_t>(targets[i]) >= vocab) {
        throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                         " out of vocab " + std::to_string(vocab));
      }
      ++count;
    }
  }
  if (count == 0) throw UsageError("cross_entropy: no target tokens");

  std::vector<double> probs(n * vocab);
  const double* lv = logits.data().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* li = lv + i * vocab;
    double m = li[0];
    for (std::size_t v = 1; v < vocab; ++v) {
      if (li[v] > m) m = li[v];
    }
    double denom = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double e = std::exp(li[v] - m);
      probs[i * vocab + v] = e;
      denom += e;
    }
    for (std::size_t v = 0; v < vocab; ++v) probs[i * vocab + v] /= denom;
    if (targets[i] >= 0) {
      loss += std::log(denom) + m - li[targets[i]];
    }
  }
  loss /= static_cast<double>(count);

  auto tgt = targets;
  return op_result(
      {1}, {loss}, {logits.node_ptr()},
      [n, vocab, count, tgt = std::move(tgt),
       probs = std::move(probs)](detail::TensorNode& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        ensure_grad(p);
        const double g = node.grad[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < n; ++i) {
          if (tgt[i] < 0) continue;
          double* gi = p.grad.data() + i * vocab;
          const double* pi = probs.data() + i * vocab;
          for (std::size_t v = 0; v < vocab; ++v) gi[v] += g * pi[v];
          gi[static_cast<std::size_t>(tgt[i])] -= g;
        }
      });
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward: undefined tensor");
  if (loss.numel() != 1) throw UsageError("backward: root must be scalar");
  detail::TensorNode* root = loss.node();
  if (!root->requires_grad) {
    throw UsageError("backward: no differentiable leaves in graph");
  }

  // Iterative postorder DFS; parents in recorded order keeps traversal
  // (and thus grad accumulation) deterministic.
  std::vector<detail::TensorNode*> topo;
  std::unordered_set<detail::TensorNode*> visited;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.node->consumed) {
      throw UsageError("backward: graph already consumed by a previous backward");
    }
    if (f.next_parent < f.node->parents.size()) {
      detail::TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::TensorNode* node = *it;
    if (node->backprop) node->backprop(*node);
    node->consumed = true;
  }
}

}  // namespace fedsim
