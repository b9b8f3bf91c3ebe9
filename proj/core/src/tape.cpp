#include "newscap/tape.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace newscap {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

}  // namespace

Var Tape::push(Tensor value, bool needs_grad, BackFn back) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.back = needs_grad ? std::move(back) : BackFn{};
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::vector<double>& Tape::grad_buf(std::uint32_t i) {
  Node& n = nodes_[i];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::add_grad(std::uint32_t i, std::span<const double> g) {
  if (!nodes_[i].needs_grad) return;
  auto& buf = grad_buf(i);
  for (std::size_t k = 0; k < buf.size(); ++k) buf[k] += g[k];
}

void Tape::add_grad_at(std::uint32_t i, std::size_t offset, double g) {
  if (!nodes_[i].needs_grad) return;
  grad_buf(i)[offset] += g;
}

Var Tape::leaf(Tensor value) {
  value.ensure_finite("tape leaf");
  return push(std::move(value), false, {});
}

Var Tape::param(Tensor& tensor) {
  if (!tensor.requires_grad()) tensor.set_requires_grad(true);
  tensor.ensure_finite("tape param");
  Var v = push(tensor, true, {});
  nodes_[v.index].bound = &tensor;
  return v;
}

Var Tape::zeros(std::vector<std::size_t> shape) { return push(Tensor(std::move(shape)), false, {}); }

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a.index);
  const Tensor& tb = val(b.index);
  require(ta.same_shape(tb), "add: shape " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = ta[i] + tb[i];
  ensure_all_finite(out.data(), "add");
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::uint32_t self) {
    auto g = std::span<const double>(t.nodes_[self].grad);
    t.add_grad(a.index, g);
    t.add_grad(b.index, g);
  });
}

Var Tape::scale(Var a, double c) {
  const Tensor& ta = val(a.index);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = ta[i] * c;
  ensure_all_finite(out.data(), "scale");
  return push(std::move(out), needs(a), [a, c](Tape& t, std::uint32_t self) {
    if (!t.nodes_[a.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    auto& ga = t.grad_buf(a.index);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var Tape::relu(Var a) {
  const Tensor& ta = val(a.index);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  return push(std::move(out), needs(a), [a](Tape& t, std::uint32_t self) {
    if (!t.nodes_[a.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    const Tensor& x = t.val(a.index);
    auto& ga = t.grad_buf(a.index);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var Tape::glu(Var a) {
  const Tensor& ta = val(a.index);
  if (ta.rank() != 1 || ta.size() % 2 != 0) {
    throw DomainError("glu: input must be an even-length vector, got " + ta.shape_str());
  }
  std::size_t n = ta.size() / 2;
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = ta[i] * sigmoid(ta[n + i]);
  ensure_all_finite(out.data(), "glu");
  return push(std::move(out), needs(a), [a, n](Tape& t, std::uint32_t self) {
    if (!t.nodes_[a.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    const Tensor& x = t.val(a.index);
    auto& ga = t.grad_buf(a.index);
    for (std::size_t i = 0; i < n; ++i) {
      double s = sigmoid(x[n + i]);
      ga[i] += g[i] * s;
      ga[n + i] += g[i] * x[i] * s * (1.0 - s);
    }
  });
}

Var Tape::softmax(Var a) {
  const Tensor& ta = val(a.index);
  if (ta.size() == 0) throw DomainError("softmax: empty input");
  std::size_t n = ta.size();
  Tensor out(ta.shape());
  double mx = ta[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, ta[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(ta[i] - mx);
    denom += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
  ensure_all_finite(out.data(), "softmax");
  return push(std::move(out), needs(a), [a](Tape& t, std::uint32_t self) {
    if (!t.nodes_[a.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    const Tensor& y = t.val(self);
    auto& ga = t.grad_buf(a.index);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
  });
}

Var Tape::log_softmax(Var a) {
  const Tensor& ta = val(a.index);
  if (ta.size() == 0) throw DomainError("log_softmax: empty input");
  std::size_t n = ta.size();
  Tensor out(ta.shape());
  double mx = ta[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, ta[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) denom += std::exp(ta[i] - mx);
  double lse = mx + std::log(denom);
  for (std::size_t i = 0; i < n; ++i) out[i] = ta[i] - lse;
  ensure_all_finite(out.data(), "log_softmax");
  return push(std::move(out), needs(a), [a](Tape& t, std::uint32_t self) {
    if (!t.nodes_[a.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    const Tensor& y = t.val(self);
    auto& ga = t.grad_buf(a.index);
    double gsum = 0.0;
    for (double gi : g) gsum += gi;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& tx = val(x.index);
  const Tensor& tg = val(gain.index);
  const Tensor& tb = val(bias.index);
  std::size_t n = tx.size();
  if (n < 2) throw DomainError("layer_norm: needs at least 2 elements, got " + std::to_string(n));
  require(tg.size() == n && tb.size() == n,
          "layer_norm: gain " + tg.shape_str() + " / bias " + tb.shape_str() + " vs x " +
              tx.shape_str());
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += tx[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (tx[i] - mean) * (tx[i] - mean);
  var /= static_cast<double>(n);
  double inv_sigma = 1.0 / std::sqrt(var + eps);
  Tensor out(tx.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = (tx[i] - mean) * inv_sigma * tg[i] + tb[i];
  ensure_all_finite(out.data(), "layer_norm");
  bool ng = needs(x) || needs(gain) || needs(bias);
  return push(std::move(out), ng,
              [x, gain, bias, mean, inv_sigma](Tape& t, std::uint32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor& tx = t.val(x.index);
                const Tensor& tg = t.val(gain.index);
                std::size_t n = g.size();
                double mean_gxh = 0.0, mean_gxh_xh = 0.0;
                // x̂ recomputed from cached mean and 1/σ.
                std::vector<double> xhat(n), gxh(n);
                for (std::size_t i = 0; i < n; ++i) {
                  xhat[i] = (tx[i] - mean) * inv_sigma;
                  gxh[i] = g[i] * tg[i];
                  mean_gxh += gxh[i];
                  mean_gxh_xh += gxh[i] * xhat[i];
                }
                mean_gxh /= static_cast<double>(n);
                mean_gxh_xh /= static_cast<double>(n);
                if (t.nodes_[x.index].needs_grad) {
                  auto& gx = t.grad_buf(x.index);
                  for (std::size_t i = 0; i < n; ++i)
                    gx[i] += inv_sigma * (gxh[i] - mean_gxh - xhat[i] * mean_gxh_xh);
                }
                if (t.nodes_[gain.index].needs_grad) {
                  auto& gg = t.grad_buf(gain.index);
                  for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * xhat[i];
                }
                t.add_grad(bias.index, g);
              });
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw DomainError("concat: no parts");
  std::size_t total = 0;
  bool ng = false;
  for (Var p : parts) {
    total += val(p.index).size();
    ng = ng || needs(p);
  }
  Tensor out({total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& tp = val(p.index);
    for (std::size_t i = 0; i < tp.size(); ++i) out[off + i] = tp[i];
    off += tp.size();
  }
  std::vector<Var> own(parts.begin(), parts.end());
  return push(std::move(out), ng, [own = std::move(own)](Tape& t, std::uint32_t self) {
    const auto& g = t.nodes_[self].grad;
    std::size_t off = 0;
    for (Var p : own) {
      std::size_t len = t.val(p.index).size();
      t.add_grad(p.index, std::span<const double>(g.data() + off, len));
      off += len;
    }
  });
}

Var Tape::slice(Var v, std::size_t offset, std::size_t length) {
  const Tensor& tv = val(v.index);
  require(offset + length <= tv.size(), "slice: [" + std::to_string(offset) + ", " +
                                            std::to_string(offset + length) + ") out of " +
                                            std::to_string(tv.size()));
  Tensor out({length});
  for (std::size_t i = 0; i < length; ++i) out[i] = tv[offset + i];
  return push(std::move(out), needs(v), [v, offset, length](Tape& t, std::uint32_t self) {
    if (!t.nodes_[v.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    auto& gv = t.grad_buf(v.index);
    for (std::size_t i = 0; i < length; ++i) gv[offset + i] += g[i];
  });
}

Var Tape::pick(Var v, std::size_t i) {
  const Tensor& tv = val(v.index);
  require(i < tv.size(), "pick: index " + std::to_string(i) + " out of " + std::to_string(tv.size()));
  Tensor out({1});
  out[0] = tv[i];
  return push(std::move(out), needs(v), [v, i](Tape& t, std::uint32_t self) {
    t.add_grad_at(v.index, i, t.nodes_[self].grad[0]);
  });
}

Var Tape::dot(Var a, Var b) {
  const Tensor& ta = val(a.index);
  const Tensor& tb = val(b.index);
  require(ta.size() == tb.size(), "dot: " + ta.shape_str() + " vs " + tb.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i] * tb[i];
  Tensor out({1});
  out[0] = s;
  ensure_all_finite(out.data(), "dot");
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::uint32_t self) {
    double g = t.nodes_[self].grad[0];
    const Tensor& ta = t.val(a.index);
    const Tensor& tb = t.val(b.index);
    if (t.nodes_[a.index].needs_grad) {
      auto& ga = t.grad_buf(a.index);
      for (std::size_t i = 0; i < tb.size(); ++i) ga[i] += g * tb[i];
    }
    if (t.nodes_[b.index].needs_grad) {
      auto& gb = t.grad_buf(b.index);
      for (std::size_t i = 0; i < ta.size(); ++i) gb[i] += g * ta[i];
    }
  });
}

Var Tape::add_scalar(Var vec, Var scalar) {
  const Tensor& tv = val(vec.index);
  const Tensor& ts = val(scalar.index);
  require(ts.size() == 1, "add_scalar: scalar operand has shape " + ts.shape_str());
  Tensor out(tv.shape());
  for (std::size_t i = 0; i < tv.size(); ++i) out[i] = tv[i] + ts[0];
  ensure_all_finite(out.data(), "add_scalar");
  return push(std::move(out), needs(vec) || needs(scalar),
              [vec, scalar](Tape& t, std::uint32_t self) {
                const auto& g = t.nodes_[self].grad;
                t.add_grad(vec.index, g);
                if (t.nodes_[scalar.index].needs_grad) {
                  double s = 0.0;
                  for (double gi : g) s += gi;
                  t.add_grad_at(scalar.index, 0, s);
                }
              });
}

Var Tape::sum(Var a) {
  const Tensor& ta = val(a.index);
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
  Tensor out({1});
  out[0] = s;
  ensure_all_finite(out.data(), "sum");
  return push(std::move(out), needs(a), [a](Tape& t, std::uint32_t self) {
    if (!t.nodes_[a.index].needs_grad) return;
    double g = t.nodes_[self].grad[0];
    auto& ga = t.grad_buf(a.index);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var Tape::linear(Var x, Var W, Var b) {
  const Tensor& tx = val(x.index);
  const Tensor& tW = val(W.index);
  const Tensor& tb = val(b.index);
  require(tW.rank() == 2 && tx.rank() == 1 && tb.rank() == 1,
          "linear: expected W matrix, x/b vectors");
  std::size_t m = tW.rows(), n = tW.cols();
  require(tx.size() == n, "linear: W columns (" + std::to_string(n) + ") != x length (" +
                              std::to_string(tx.size()) + ")");
  require(tb.size() == m, "linear: W rows (" + std::to_string(m) + ") != b length (" +
                              std::to_string(tb.size()) + ")");
  Tensor out({m});
  const double* wd = tW.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = tb[i];
    const double* wr = wd + i * n;
    for (std::size_t j = 0; j < n; ++j) s += wr[j] * tx[j];
    out[i] = s;
  }
  ensure_all_finite(out.data(), "linear");
  bool ng = needs(x) || needs(W) || needs(b);
  return push(std::move(out), ng, [x, W, b, m, n](Tape& t, std::uint32_t self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& tx = t.val(x.index);
    const Tensor& tW = t.val(W.index);
    if (t.nodes_[x.index].needs_grad) {
      auto& gx = t.grad_buf(x.index);
      const double* wd = tW.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* wr = wd + i * n;
        double gi = g[i];
        for (std::size_t j = 0; j < n; ++j) gx[j] += gi * wr[j];
      }
    }
    if (t.nodes_[W.index].needs_grad) {
      auto& gW = t.grad_buf(W.index);
      for (std::size_t i = 0; i < m; ++i) {
        double gi = g[i];
        double* gr = gW.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gr[j] += gi * tx[j];
      }
    }
    t.add_grad(b.index, g);
  });
}

Var Tape::matvec(Var A, Var x) {
  const Tensor& tA = val(A.index);
  const Tensor& tx = val(x.index);
  require(tA.rank() == 2 && tx.rank() == 1, "matvec: expected matrix and vector");
  std::size_t m = tA.rows(), n = tA.cols();
  require(tx.size() == n, "matvec: A columns (" + std::to_string(n) + ") != x length (" +
                              std::to_string(tx.size()) + ")");
  Tensor out({m});
  const double* ad = tA.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* ar = ad + i * n;
    for (std::size_t j = 0; j < n; ++j) s += ar[j] * tx[j];
    out[i] = s;
  }
  ensure_all_finite(out.data(), "matvec");
  return push(std::move(out), needs(A) || needs(x), [A, x, m, n](Tape& t, std::uint32_t self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& tA = t.val(A.index);
    const Tensor& tx = t.val(x.index);
    if (t.nodes_[A.index].needs_grad) {
      auto& gA = t.grad_buf(A.index);
      for (std::size_t i = 0; i < m; ++i) {
        double gi = g[i];
        double* gr = gA.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gr[j] += gi * tx[j];
      }
    }
    if (t.nodes_[x.index].needs_grad) {
      auto& gx = t.grad_buf(x.index);
      const double* ad = tA.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        double gi = g[i];
        const double* ar = ad + i * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += gi * ar[j];
      }
    }
  });
}

Var Tape::matvec_t(Var A, Var y) {
  const Tensor& tA = val(A.index);
  const Tensor& ty = val(y.index);
  require(tA.rank() == 2 && ty.rank() == 1, "matvec_t: expected matrix and vector");
  std::size_t m = tA.rows(), n = tA.cols();
  require(ty.size() == m, "matvec_t: A rows (" + std::to_string(m) + ") != y length (" +
                              std::to_string(ty.size()) + ")");
  Tensor out({n});
  const double* ad = tA.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = ad + i * n;
    double yi = ty[i];
    for (std::size_t j = 0; j < n; ++j) out[j] += yi * ar[j];
  }
  ensure_all_finite(out.data(), "matvec_t");
  return push(std::move(out), needs(A) || needs(y), [A, y, m, n](Tape& t, std::uint32_t self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& tA = t.val(A.index);
    const Tensor& ty = t.val(y.index);
    if (t.nodes_[A.index].needs_grad) {
      auto& gA = t.grad_buf(A.index);
      for (std::size_t i = 0; i < m; ++i) {
        double yi = ty[i];
        double* gr = gA.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gr[j] += yi * g[j];
      }
    }
    if (t.nodes_[y.index].needs_grad) {
      auto& gy = t.grad_buf(y.index);
      const double* ad = tA.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* ar = ad + i * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += ar[j] * g[j];
        gy[i] += s;
      }
    }
  });
}

Var Tape::matmul_nt(Var A, Var B) {
  const Tensor& tA = val(A.index);
  const Tensor& tB = val(B.index);
  require(tA.rank() == 2 && tB.rank() == 2, "matmul_nt: expected matrices");
  std::size_t m = tA.rows(), k = tA.cols(), n = tB.rows();
  require(tB.cols() == k, "matmul_nt: inner dims " + std::to_string(k) + " vs " +
                              std::to_string(tB.cols()));
  Tensor out({m, n});
  const double* ad = tA.data().data();
  const double* bd = tB.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = ad + i * k;
    double* orow = out.data().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = bd + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      orow[j] = s;
    }
  }
  ensure_all_finite(out.data(), "matmul_nt");
  return push(std::move(out), needs(A) || needs(B), [A, B, m, k, n](Tape& t, std::uint32_t self) {
    const auto& g = t.nodes_[self].grad;
    const Tensor& tA = t.val(A.index);
    const Tensor& tB = t.val(B.index);
    if (t.nodes_[A.index].needs_grad) {
      auto& gA = t.grad_buf(A.index);  // gA += G·B
      for (std::size_t i = 0; i < m; ++i) {
        const double* gr = g.data() + i * n;
        double* gar = gA.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double* br = tB.data().data() + j * k;
          double gij = gr[j];
          for (std::size_t p = 0; p < k; ++p) gar[p] += gij * br[p];
        }
      }
    }
    if (t.nodes_[B.index].needs_grad) {
      auto& gB = t.grad_buf(B.index);  // gB += Gᵀ·A
      for (std::size_t i = 0; i < m; ++i) {
        const double* gr = g.data() + i * n;
        const double* ar = tA.data().data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          double gij = gr[j];
          double* gbr = gB.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) gbr[p] += gij * ar[p];
        }
      }
    }
  });
}

Var Tape::row(Var M, std::size_t r) {
  const Tensor& tM = val(M.index);
  require(tM.rank() == 2, "row: expected matrix, got " + tM.shape_str());
  require(r < tM.rows(), "row: index " + std::to_string(r) + " out of " + std::to_string(tM.rows()));
  std::size_t n = tM.cols();
  Tensor out({n});
  for (std::size_t j = 0; j < n; ++j) out[j] = tM.at(r, j);
  return push(std::move(out), needs(M), [M, r, n](Tape& t, std::uint32_t self) {
    if (!t.nodes_[M.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    auto& gM = t.grad_buf(M.index);
    for (std::size_t j = 0; j < n; ++j) gM[r * n + j] += g[j];
  });
}

Var Tape::mix_layers(Var alpha, const std::vector<Tensor>& layers) {
  const Tensor& ta = val(alpha.index);
  if (layers.empty()) throw DomainError("mix_layers: no layers");
  require(ta.size() == layers.size(), "mix_layers: weight count " + std::to_string(ta.size()) +
                                          " != layer count " + std::to_string(layers.size()));
  for (std::size_t l = 1; l < layers.size(); ++l) {
    require(layers[l].same_shape(layers[0]), "mix_layers: layer " + std::to_string(l) +
                                                 " shape " + layers[l].shape_str() + " vs " +
                                                 layers[0].shape_str());
  }
  Tensor out(layers[0].shape());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    double w = ta[l];
    const auto& ld = layers[l].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * ld[i];
  }
  ensure_all_finite(out.data(), "mix_layers");
  // Layers are captured by value: constants owned by the node.
  return push(std::move(out), needs(alpha), [alpha, layers](Tape& t, std::uint32_t self) {
    if (!t.nodes_[alpha.index].needs_grad) return;
    const auto& g = t.nodes_[self].grad;
    auto& ga = t.grad_buf(alpha.index);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& ld = layers[l].data();
      double s = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * ld[i];
      ga[l] += s;
    }
  });
}

Var Tape::weighted_sum(std::span<const Var> values, Var weights) {
  const Tensor& tw = val(weights.index);
  if (values.empty() || values.size() != tw.size()) {
    throw ContractError("weighted_sum: " + std::to_string(values.size()) + " values for " +
                        std::to_string(tw.size()) + " weights");
  }
  std::size_t k = values.size();
  std::size_t d = val(values[0].index).size();
  bool ng = needs(weights);
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& tv = val(values[j].index);
    require(tv.size() == d, "weighted_sum: value " + std::to_string(j) + " length " +
                                std::to_string(tv.size()) + " vs " + std::to_string(d));
    ng = ng || needs(values[j]);
  }
  Tensor out({d});
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& tv = val(values[j].index);
    double w = tw[j];
    for (std::size_t i = 0; i < d; ++i) out[i] += w * tv[i];
  }
  ensure_all_finite(out.data(), "weighted_sum");
  std::vector<Var> ov(values.begin(), values.end());
  return push(std::move(out), ng,
              [ov = std::move(ov), weights](Tape& t, std::uint32_t self) {
                const auto& g = t.nodes_[self].grad;
                const Tensor& tw = t.val(weights.index);
                for (std::size_t j = 0; j < ov.size(); ++j) {
                  if (t.nodes_[ov[j].index].needs_grad) {
                    auto& gv = t.grad_buf(ov[j].index);
                    double w = tw[j];
                    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += w * g[i];
                  }
                  if (t.nodes_[weights.index].needs_grad) {
                    const Tensor& tv = t.val(ov[j].index);
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * tv[i];
                    t.add_grad_at(weights.index, j, s);
                  }
                }
              });
}

void Tape::backward(Var loss) {
  Node& ln = nodes_[loss.index];
  if (ln.value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + ln.value.shape_str());
  }
  if (!ln.needs_grad) {
    // Nothing differentiable upstream; still perform the sweep for the
    // visit-order contract.
    last_visits_ = nodes_.size();
    return;
  }
  grad_buf(loss.index)[0] += 1.0;
  last_visits_ = 0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    ++last_visits_;
    Node& n = nodes_[i];
    if (n.back && !n.grad.empty()) {
      n.back(*this, static_cast<std::uint32_t>(i));
    }
  }
  // Flush parameter gradients in node-creation order so accumulation order
  // is reproducible.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.bound == nullptr || n.grad.empty()) continue;
    ensure_all_finite(n.grad, "backward parameter gradient");
    std::vector<double>* dst = sink_ ? sink_(n.bound) : nullptr;
    if (dst != nullptr) {
      if (dst->size() != n.grad.size()) {
        throw DimensionError("backward: gradient sink length " + std::to_string(dst->size()) +
                             " vs parameter length " + std::to_string(n.grad.size()));
      }
      for (std::size_t j = 0; j < n.grad.size(); ++j) (*dst)[j] += n.grad[j];
    } else {
      n.bound->accumulate_grad(n.grad);
    }
  }
}

std::span<const double> Tape::grad(Var v) const {
  return std::span<const double>(nodes_[v.index].grad);
}

void Tape::clear() {
  nodes_.clear();
  last_visits_ = 0;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  if (!(h > 0.0) || h > 1e-2) {
    throw DomainError("grad_check: step must lie in (0, 1e-2], got " + std::to_string(h));
  }
  Tensor xc = x;
  xc.set_requires_grad(true);
  xc.zero_grad();
  Tape tape;
  Var xv = tape.param(xc);
  Var loss = f(tape, xv);
  if (tape.value(loss).size() != 1) {
    throw ContractError("grad_check: f must be scalar-valued");
  }
  tape.backward(loss);
  std::vector<double> analytic = xc.grad();

  auto eval = [&f](const Tensor& point) {
    Tape t;
    Var v = t.leaf(point);
    Var l = f(t, v);
    return t.value(l)[0];
  };

  double max_err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double fd = (eval(xp) - eval(xm)) / (2.0 * h);
    double a = analytic[i];
    double denom = std::max({1.0, std::abs(a), std::abs(fd)});
    max_err = std::max(max_err, std::abs(a - fd) / denom);
  }
  return max_err;
}

}  // namespace newscap
