#include "qdt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qdt/errors.hpp"

namespace qdt::nn {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}
}  // namespace

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw Error("parameter already exists: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(init.n_rows, init.n_cols);
  p->value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no such parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no such parameter: " + name);
  return *params_[it->second];
}

bool ParameterStore::has(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::size_t ParameterStore::n_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

NodeId Graph::emplace(const char* op, Tensor value,
                      std::function<void(Graph&, const Node&)> backward,
                      Parameter* bound) {
  Node n;
  n.grad = Tensor(value.n_rows, value.n_cols);
  n.value = std::move(value);
  n.op = op;
  n.bound = bound;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::require_same_shape(const char* op, NodeId a, NodeId b) const {
  if (!nodes_[a].value.same_shape(nodes_[b].value)) {
    throw Error(std::string(op) + ": shape mismatch");
  }
}

NodeId Graph::input(Tensor value) { return emplace("input", std::move(value), {}); }

NodeId Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  NodeId id = emplace("param", p.value, {}, &p);
  param_nodes_[&p] = id;
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.n_cols != tb.n_rows) throw Error("matmul: inner dimensions differ");
  Tensor out(ta.n_rows, tb.n_cols);
  matmul_acc(ta.v.data(), tb.v.data(), out.v.data(), ta.n_rows, ta.n_cols,
             tb.n_cols);
  return emplace("matmul", std::move(out),
                 [a, b](Graph& g, const Node& self) {
                   const Tensor& ta = g.val(a);
                   const Tensor& tb = g.val(b);
                   matmul_bt_acc(self.grad.v.data(), tb.v.data(),
                                 g.grad_ref(a).v.data(), ta.n_rows, ta.n_cols,
                                 tb.n_cols);
                   matmul_at_acc(ta.v.data(), self.grad.v.data(),
                                 g.grad_ref(b).v.data(), ta.n_rows, ta.n_cols,
                                 tb.n_cols);
                 });
}

NodeId Graph::add(NodeId a, NodeId b) {
  require_same_shape("add", a, b);
  Tensor out = val(a);
  const Tensor& tb = val(b);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += tb.v[i];
  return emplace("add", std::move(out), [a, b](Graph& g, const Node& self) {
    Tensor& ga = g.grad_ref(a);
    Tensor& gb = g.grad_ref(b);
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      ga.v[i] += self.grad.v[i];
      gb.v[i] += self.grad.v[i];
    }
  });
}

NodeId Graph::sub(NodeId a, NodeId b) {
  require_same_shape("sub", a, b);
  Tensor out = val(a);
  const Tensor& tb = val(b);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= tb.v[i];
  return emplace("sub", std::move(out), [a, b](Graph& g, const Node& self) {
    Tensor& ga = g.grad_ref(a);
    Tensor& gb = g.grad_ref(b);
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      ga.v[i] += self.grad.v[i];
      gb.v[i] -= self.grad.v[i];
    }
  });
}

NodeId Graph::mul(NodeId a, NodeId b) {
  require_same_shape("mul", a, b);
  Tensor out = val(a);
  const Tensor& tb = val(b);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= tb.v[i];
  return emplace("mul", std::move(out), [a, b](Graph& g, const Node& self) {
    const Tensor& ta = g.val(a);
    const Tensor& tb = g.val(b);
    Tensor& ga = g.grad_ref(a);
    Tensor& gb = g.grad_ref(b);
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      ga.v[i] += self.grad.v[i] * tb.v[i];
      gb.v[i] += self.grad.v[i] * ta.v[i];
    }
  });
}

NodeId Graph::scale(NodeId x, double c) {
  Tensor out = val(x);
  for (double& e : out.v) e *= c;
  return emplace("scale", std::move(out), [x, c](Graph& g, const Node& self) {
    Tensor& gx = g.grad_ref(x);
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      gx.v[i] += c * self.grad.v[i];
    }
  });
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
  const Tensor& tx = val(x);
  const Tensor& tb = val(bias);
  if (tb.n_rows != 1 || tb.n_cols != tx.n_cols) {
    throw Error("add_bias: bias must be [1 x cols(x)]");
  }
  Tensor out = tx;
  for (std::size_t r = 0; r < out.n_rows; ++r) {
    double* o = out.row_ptr(r);
    for (std::size_t c = 0; c < out.n_cols; ++c) o[c] += tb.v[c];
  }
  return emplace("add_bias", std::move(out),
                 [x, bias](Graph& g, const Node& self) {
                   Tensor& gx = g.grad_ref(x);
                   Tensor& gb = g.grad_ref(bias);
                   for (std::size_t r = 0; r < self.grad.n_rows; ++r) {
                     const double* gr = self.grad.row_ptr(r);
                     double* gxr = gx.row_ptr(r);
                     for (std::size_t c = 0; c < self.grad.n_cols; ++c) {
                       gxr[c] += gr[c];
                       gb.v[c] += gr[c];
                     }
                   }
                 });
}

NodeId Graph::relu(NodeId x) {
  Tensor out = val(x);
  for (double& e : out.v) e = e > 0.0 ? e : 0.0;
  return emplace("relu", std::move(out), [x](Graph& g, const Node& self) {
    const Tensor& tx = g.val(x);
    Tensor& gx = g.grad_ref(x);
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      if (tx.v[i] > 0.0) gx.v[i] += self.grad.v[i];
    }
  });
}

NodeId Graph::gelu(NodeId x) {
  Tensor out = val(x);
  for (double& e : out.v) e = 0.5 * e * (1.0 + std::erf(e * kInvSqrt2));
  return emplace("gelu", std::move(out), [x](Graph& g, const Node& self) {
    const Tensor& tx = g.val(x);
    Tensor& gx = g.grad_ref(x);
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      const double e = tx.v[i];
      const double cdf = 0.5 * (1.0 + std::erf(e * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * e * e);
      gx.v[i] += self.grad.v[i] * (cdf + e * pdf);
    }
  });
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& tx = val(x);
  const Tensor& tg = val(gain);
  const Tensor& tb = val(bias);
  if (tg.n_rows != 1 || tg.n_cols != tx.n_cols || !tg.same_shape(tb)) {
    throw Error("layer_norm: gain/bias must be [1 x cols(x)]");
  }
  const std::size_t n = tx.n_cols;
  Tensor out(tx.n_rows, n);
  Tensor xhat(tx.n_rows, n);
  std::vector<double> inv_sigma(tx.n_rows);
  for (std::size_t r = 0; r < tx.n_rows; ++r) {
    const double* xr = tx.row_ptr(r);
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sigma[r] = is;
    double* hr = xhat.row_ptr(r);
    double* orow = out.row_ptr(r);
    for (std::size_t c = 0; c < n; ++c) {
      hr[c] = (xr[c] - mu) * is;
      orow[c] = tg.v[c] * hr[c] + tb.v[c];
    }
  }
  return emplace(
      "layer_norm", std::move(out),
      [x, gain, bias, xhat = std::move(xhat),
       inv_sigma = std::move(inv_sigma)](Graph& g, const Node& self) {
        const Tensor& tg = g.val(gain);
        Tensor& gx = g.grad_ref(x);
        Tensor& gg = g.grad_ref(gain);
        Tensor& gb = g.grad_ref(bias);
        const std::size_t n = self.grad.n_cols;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < self.grad.n_rows; ++r) {
          const double* dy = self.grad.row_ptr(r);
          const double* hr = xhat.row_ptr(r);
          double* gxr = gx.row_ptr(r);
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double dh = dy[c] * tg.v[c];
            sum_dh += dh;
            sum_dh_h += dh * hr[c];
            gg.v[c] += dy[c] * hr[c];
            gb.v[c] += dy[c];
          }
          const double m1 = sum_dh * inv_n;
          const double m2 = sum_dh_h * inv_n;
          for (std::size_t c = 0; c < n; ++c) {
            const double dh = dy[c] * tg.v[c];
            gxr[c] += inv_sigma[r] * (dh - m1 - hr[c] * m2);
          }
        }
      });
}

NodeId Graph::gather_rows(NodeId src, std::vector<int> rows) {
  const Tensor& ts = val(src);
  Tensor out(rows.size(), ts.n_cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= ts.n_rows) {
      throw Error("gather_rows: index out of range");
    }
    std::copy_n(ts.row_ptr(rows[i]), ts.n_cols, out.row_ptr(i));
  }
  return emplace("gather_rows", std::move(out),
                 [src, rows = std::move(rows)](Graph& g, const Node& self) {
                   Tensor& gs = g.grad_ref(src);
                   for (std::size_t i = 0; i < rows.size(); ++i) {
                     const double* gr = self.grad.row_ptr(i);
                     double* dst = gs.row_ptr(rows[i]);
                     for (std::size_t c = 0; c < self.grad.n_cols; ++c) {
                       dst[c] += gr[c];
                     }
                   }
                 });
}

NodeId Graph::scatter_rows(NodeId src, std::vector<int> dst,
                           std::size_t n_dst_rows) {
  const Tensor& ts = val(src);
  if (dst.size() != ts.n_rows) throw Error("scatter_rows: index count mismatch");
  Tensor out(n_dst_rows, ts.n_cols);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i] < 0 || static_cast<std::size_t>(dst[i]) >= n_dst_rows) {
      throw Error("scatter_rows: index out of range");
    }
    const double* s = ts.row_ptr(i);
    double* o = out.row_ptr(dst[i]);
    for (std::size_t c = 0; c < ts.n_cols; ++c) o[c] += s[c];
  }
  return emplace("scatter_rows", std::move(out),
                 [src, dst = std::move(dst)](Graph& g, const Node& self) {
                   Tensor& gs = g.grad_ref(src);
                   for (std::size_t i = 0; i < dst.size(); ++i) {
                     const double* gr = self.grad.row_ptr(dst[i]);
                     double* d = gs.row_ptr(i);
                     for (std::size_t c = 0; c < self.grad.n_cols; ++c) {
                       d[c] += gr[c];
                     }
                   }
                 });
}

NodeId Graph::dropout(NodeId x, double p, bool train, Rng& rng) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout: p must be < 1");
  const Tensor& tx = val(x);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(tx.numel());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = tx;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= mask[i];
  return emplace("dropout", std::move(out),
                 [x, mask = std::move(mask)](Graph& g, const Node& self) {
                   Tensor& gx = g.grad_ref(x);
                   for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
                     gx.v[i] += self.grad.v[i] * mask[i];
                   }
                 });
}

NodeId Graph::causal_self_attention(NodeId qkv, std::size_t n_seq,
                                    std::size_t seq_len, std::size_t n_heads,
                                    std::vector<int> first_valid) {
  const Tensor& t = val(qkv);
  if (t.n_rows != n_seq * seq_len) {
    throw Error("causal_self_attention: rows != n_seq * seq_len");
  }
  if (t.n_cols % 3 != 0) throw Error("causal_self_attention: cols not 3*D");
  const std::size_t d = t.n_cols / 3;
  if (d % n_heads != 0) {
    throw Error("causal_self_attention: D not divisible by n_heads");
  }
  if (first_valid.size() != n_seq) {
    throw Error("causal_self_attention: first_valid size != n_seq");
  }
  const std::size_t hd = d / n_heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor out(t.n_rows, d);
  // probs[b][h][i][j], zero where masked
  std::vector<double> probs(n_seq * n_heads * seq_len * seq_len, 0.0);
  std::vector<double> scores(seq_len);

  auto visible = [&](std::size_t b, std::size_t i, std::size_t j) {
    return j <= i &&
           (static_cast<int>(j) >= first_valid[b] || j == i);
  };

  for (std::size_t b = 0; b < n_seq; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t col_q = h * hd;
      const std::size_t col_k = d + h * hd;
      const std::size_t col_v = 2 * d + h * hd;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* qi = t.row_ptr(b * seq_len + i) + col_q;
        double max_s = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          if (!visible(b, i, j)) continue;
          const double* kj = t.row_ptr(b * seq_len + j) + col_k;
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * inv_sqrt_hd;
          max_s = std::max(max_s, scores[j]);
        }
        double denom = 0.0;
        double* pij =
            probs.data() + ((b * n_heads + h) * seq_len + i) * seq_len;
        for (std::size_t j = 0; j <= i; ++j) {
          if (!visible(b, i, j)) continue;
          pij[j] = std::exp(scores[j] - max_s);
          denom += pij[j];
        }
        double* oi = out.row_ptr(b * seq_len + i) + col_q;
        for (std::size_t j = 0; j <= i; ++j) {
          if (pij[j] == 0.0) continue;
          pij[j] /= denom;
          const double* vj = t.row_ptr(b * seq_len + j) + col_v;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += pij[j] * vj[c];
        }
      }
    }
  }

  return emplace(
      "causal_self_attention", std::move(out),
      [qkv, n_seq, seq_len, n_heads, hd, d, inv_sqrt_hd,
       probs = std::move(probs)](Graph& g, const Node& self) {
        const Tensor& t = g.val(qkv);
        Tensor& gt = g.grad_ref(qkv);
        std::vector<double> dp(seq_len);
        for (std::size_t b = 0; b < n_seq; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t col_q = h * hd;
            const std::size_t col_k = d + h * hd;
            const std::size_t col_v = 2 * d + h * hd;
            for (std::size_t i = 0; i < seq_len; ++i) {
              const double* go = self.grad.row_ptr(b * seq_len + i) + col_q;
              const double* pij =
                  probs.data() + ((b * n_heads + h) * seq_len + i) * seq_len;
              // dV and dp
              double dot_p_dp = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                if (pij[j] == 0.0) {
                  dp[j] = 0.0;
                  continue;
                }
                const double* vj = t.row_ptr(b * seq_len + j) + col_v;
                double* gvj = gt.row_ptr(b * seq_len + j) + col_v;
                double acc = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                  acc += go[c] * vj[c];
                  gvj[c] += pij[j] * go[c];
                }
                dp[j] = acc;
                dot_p_dp += pij[j] * acc;
              }
              // dS -> dQ, dK
              const double* qi = t.row_ptr(b * seq_len + i) + col_q;
              double* gqi = gt.row_ptr(b * seq_len + i) + col_q;
              for (std::size_t j = 0; j <= i; ++j) {
                if (pij[j] == 0.0) continue;
                const double ds = pij[j] * (dp[j] - dot_p_dp) * inv_sqrt_hd;
                const double* kj = t.row_ptr(b * seq_len + j) + col_k;
                double* gkj = gt.row_ptr(b * seq_len + j) + col_k;
                for (std::size_t c = 0; c < hd; ++c) {
                  gqi[c] += ds * kj[c];
                  gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> targets,
                                    std::vector<double> weights) {
  const Tensor& tl = val(logits);
  if (targets.size() != tl.n_rows) {
    throw Error("softmax_cross_entropy: one target per row required");
  }
  if (weights.empty()) weights.assign(tl.n_rows, 1.0);
  if (weights.size() != tl.n_rows) {
    throw Error("softmax_cross_entropy: weights size mismatch");
  }
  double total_w = 0.0;
  for (std::size_t i = 0; i < tl.n_rows; ++i) {
    if (weights[i] < 0.0) throw Error("softmax_cross_entropy: negative weight");
    if (weights[i] > 0.0 &&
        (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= tl.n_cols)) {
      throw Error("softmax_cross_entropy: target out of range");
    }
    total_w += weights[i];
  }
  if (total_w <= 0.0) {
    throw Error("softmax_cross_entropy: no rows with positive weight");
  }

  Tensor probs(tl.n_rows, tl.n_cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < tl.n_rows; ++r) {
    const double* x = tl.row_ptr(r);
    double mx = x[0];
    for (std::size_t c = 1; c < tl.n_cols; ++c) mx = std::max(mx, x[c]);
    double denom = 0.0;
    double* p = probs.row_ptr(r);
    for (std::size_t c = 0; c < tl.n_cols; ++c) {
      p[c] = std::exp(x[c] - mx);
      denom += p[c];
    }
    const double inv = 1.0 / denom;
    for (std::size_t c = 0; c < tl.n_cols; ++c) p[c] *= inv;
    if (weights[r] > 0.0) {
      loss += weights[r] * (std::log(denom) + mx - x[targets[r]]);
    }
  }
  loss /= total_w;

  return emplace(
      "softmax_cross_entropy", Tensor::scalar(loss),
      [logits, targets = std::move(targets), weights = std::move(weights),
       probs = std::move(probs), total_w](Graph& g, const Node& self) {
        const double gy = self.grad.v[0];
        Tensor& gl = g.grad_ref(logits);
        for (std::size_t r = 0; r < gl.n_rows; ++r) {
          if (weights[r] == 0.0) continue;
          const double w = gy * weights[r] / total_w;
          const double* p = probs.row_ptr(r);
          double* gr = gl.row_ptr(r);
          for (std::size_t c = 0; c < gl.n_cols; ++c) gr[c] += w * p[c];
          gr[targets[r]] -= w;
        }
      });
}

NodeId Graph::logsumexp_rows(NodeId x) {
  const Tensor& tx = val(x);
  Tensor out(tx.n_rows, 1);
  Tensor probs(tx.n_rows, tx.n_cols);
  for (std::size_t r = 0; r < tx.n_rows; ++r) {
    const double* xr = tx.row_ptr(r);
    double mx = xr[0];
    for (std::size_t c = 1; c < tx.n_cols; ++c) mx = std::max(mx, xr[c]);
    double denom = 0.0;
    double* p = probs.row_ptr(r);
    for (std::size_t c = 0; c < tx.n_cols; ++c) {
      p[c] = std::exp(xr[c] - mx);
      denom += p[c];
    }
    out.v[r] = std::log(denom) + mx;
    const double inv = 1.0 / denom;
    for (std::size_t c = 0; c < tx.n_cols; ++c) p[c] *= inv;
  }
  return emplace("logsumexp_rows", std::move(out),
                 [x, probs = std::move(probs)](Graph& g, const Node& self) {
                   Tensor& gx = g.grad_ref(x);
                   for (std::size_t r = 0; r < gx.n_rows; ++r) {
                     const double gy = self.grad.v[r];
                     const double* p = probs.row_ptr(r);
                     double* gr = gx.row_ptr(r);
                     for (std::size_t c = 0; c < gx.n_cols; ++c) {
                       gr[c] += gy * p[c];
                     }
                   }
                 });
}

NodeId Graph::select_per_row(NodeId x, std::vector<int> cols) {
  const Tensor& tx = val(x);
  if (cols.size() != tx.n_rows) {
    throw Error("select_per_row: one column index per row required");
  }
  Tensor out(tx.n_rows, 1);
  for (std::size_t r = 0; r < tx.n_rows; ++r) {
    if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= tx.n_cols) {
      throw Error("select_per_row: index out of range");
    }
    out.v[r] = tx.at(r, cols[r]);
  }
  return emplace("select_per_row", std::move(out),
                 [x, cols = std::move(cols)](Graph& g, const Node& self) {
                   Tensor& gx = g.grad_ref(x);
                   for (std::size_t r = 0; r < gx.n_rows; ++r) {
                     gx.at(r, cols[r]) += self.grad.v[r];
                   }
                 });
}

NodeId Graph::sum(NodeId x) {
  const Tensor& tx = val(x);
  double s = 0.0;
  for (double e : tx.v) s += e;
  return emplace("sum", Tensor::scalar(s), [x](Graph& g, const Node& self) {
    Tensor& gx = g.grad_ref(x);
    for (double& e : gx.v) e += self.grad.v[0];
  });
}

NodeId Graph::mean(NodeId x) {
  const Tensor& tx = val(x);
  const double inv_n = 1.0 / static_cast<double>(tx.numel());
  double s = 0.0;
  for (double e : tx.v) s += e;
  return emplace("mean", Tensor::scalar(s * inv_n),
                 [x, inv_n](Graph& g, const Node& self) {
                   Tensor& gx = g.grad_ref(x);
                   for (double& e : gx.v) e += self.grad.v[0] * inv_n;
                 });
}

void Graph::backward(NodeId loss) {
  if (nodes_[loss].value.numel() != 1) {
    throw Error("backward: loss must be a scalar");
  }
  nodes_[loss].grad.v[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.backward) n.backward(*this, n);
  }
  for (Node& n : nodes_) {
    if (n.bound == nullptr) continue;
    Tensor& pg = n.bound->grad;
    for (std::size_t i = 0; i < pg.v.size(); ++i) pg.v[i] += n.grad.v[i];
  }
}

void Graph::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

std::optional<Graph::NonFinite> Graph::find_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!all_finite(nodes_[i].value.v)) {
      return NonFinite{nodes_[i].op, static_cast<NodeId>(i)};
    }
  }
  return std::nullopt;
}

}  // namespace qdt::nn
