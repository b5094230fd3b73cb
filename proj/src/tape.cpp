#include "hmlstm/tape.hpp"

#include <algorithm>
#include <cmath>

namespace hmlstm {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

NodeId Tape::leaf(Tensor value) {
  return record(std::move(value), {}, nullptr);
}

NodeId Tape::record(Tensor value, std::vector<NodeId> parents, BackwardFn back) {
  if (!value.all_finite())
    throw std::runtime_error("Tape: non-finite value produced by forward op");
  for (NodeId p : parents) check_id(p);
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::backward(NodeId loss) {
  std::size_t li = check_id(loss);
  check(nodes_[li].value.is_scalar(), "Tape::backward: loss must be a scalar node");
  for (auto& n : nodes_) n.grad.assign(n.value.data.size(), real_t(0));
  nodes_[li].grad[0] = real_t(1);
  for (std::size_t i = li + 1; i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this, static_cast<NodeId>(i));
  }
}

void Tape::reset() {
  nodes_.clear();
  min_kink_dist_ = std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------

NodeId affine(Tape& t, NodeId w, NodeId x, NodeId b) {
  const Tensor& wv = t.val(w);
  const Tensor& xv = t.val(x);
  check(wv.shape.size() == 2, "affine: W must be a matrix");
  check(xv.shape.size() == 1, "affine: x must be a vector");
  const int m = wv.rows(), n = wv.cols();
  check(xv.shape[0] == n, "affine: W/x dimension mismatch");
  if (b != kNoNode) {
    const Tensor& bv = t.val(b);
    check(bv.shape.size() == 1 && bv.shape[0] == m, "affine: bias dimension mismatch");
  }

  Tensor y = Tensor::zeros({m});
  {
    const real_t* __restrict wp = wv.data.data();
    const real_t* __restrict xp = xv.data.data();
    const real_t* __restrict bp = (b != kNoNode) ? t.val(b).data.data() : nullptr;
    // eight independent accumulators keep the FMA pipeline full
    for (int i = 0; i < m; ++i) {
      const real_t* __restrict row = wp + static_cast<std::size_t>(i) * n;
      real_t a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        a0 += row[j] * xp[j];
        a1 += row[j + 1] * xp[j + 1];
        a2 += row[j + 2] * xp[j + 2];
        a3 += row[j + 3] * xp[j + 3];
        a4 += row[j + 4] * xp[j + 4];
        a5 += row[j + 5] * xp[j + 5];
        a6 += row[j + 6] * xp[j + 6];
        a7 += row[j + 7] * xp[j + 7];
      }
      real_t acc = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7));
      for (; j < n; ++j) acc += row[j] * xp[j];
      y.data[static_cast<std::size_t>(i)] = bp ? acc + bp[i] : acc;
    }
  }

  std::vector<NodeId> parents = {w, x};
  if (b != kNoNode) parents.push_back(b);
  return t.record(std::move(y), std::move(parents), [w, x, b, m, n](Tape& tp, NodeId self) {
    const real_t* __restrict g = tp.grad(self).data();
    bool any = false;
    for (int i = 0; i < m; ++i) any = any || g[i] != 0;
    if (!any) return;  // common for gated-off products in hard modes
    const real_t* __restrict wp = tp.val(w).data.data();
    const real_t* __restrict xp = tp.val(x).data.data();
    real_t* __restrict gw = tp.grad_mut(w).data();
    real_t* __restrict gx = tp.grad_mut(x).data();
    for (int i = 0; i < m; ++i) {
      const real_t gi = g[i];
      const std::size_t off = static_cast<std::size_t>(i) * n;
      real_t* __restrict gwrow = gw + off;
      const real_t* __restrict wrow = wp + off;
      for (int j = 0; j < n; ++j) {
        gwrow[j] += gi * xp[j];
        gx[j] += wrow[j] * gi;
      }
    }
    if (b != kNoNode) {
      real_t* __restrict gb = tp.grad_mut(b).data();
      for (int i = 0; i < m; ++i) gb[i] += g[i];
    }
  });
}

NodeId add(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check(same_shape(av, bv), "add: shape mismatch");
  Tensor y = av;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += bv.data[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad_mut(a);
    auto& gb = tp.grad_mut(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check(same_shape(av, bv), "mul: shape mismatch");
  Tensor y = av;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= bv.data[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    const auto& av2 = tp.val(a).data;
    const auto& bv2 = tp.val(b).data;
    auto& ga = tp.grad_mut(a);
    auto& gb = tp.grad_mut(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv2[i];
      gb[i] += g[i] * av2[i];
    }
  });
}

NodeId scale(Tape& t, NodeId s, NodeId v) {
  const Tensor& sv = t.val(s);
  check(sv.is_scalar(), "scale: s must be a scalar node");
  const real_t k = sv.data[0];
  Tensor y = t.val(v);
  for (real_t& e : y.data) e *= k;
  return t.record(std::move(y), {s, v}, [s, v](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    const real_t k2 = tp.val(s).data[0];
    const auto& vv = tp.val(v).data;
    real_t acc = 0;
    if (k2 != 0) {
      auto& gv = tp.grad_mut(v);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gv[i] += k2 * g[i];
        acc += vv[i] * g[i];
      }
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) acc += vv[i] * g[i];
    }
    tp.grad_mut(s)[0] += acc;
  });
}

NodeId scale_const(Tape& t, NodeId v, real_t k) {
  Tensor y = t.val(v);
  for (real_t& e : y.data) e *= k;
  return t.record(std::move(y), {v}, [v, k](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    auto& gv = tp.grad_mut(v);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += k * g[i];
  });
}

NodeId blend(Tape& t, NodeId w, NodeId on_one, NodeId on_zero) {
  const Tensor& wv = t.val(w);
  check(wv.is_scalar(), "blend: weight must be a scalar node");
  const Tensor& av = t.val(on_one);
  const Tensor& bv = t.val(on_zero);
  check(same_shape(av, bv), "blend: branch shape mismatch");
  const real_t k = wv.data[0];
  Tensor y;
  if (k == real_t(1)) {
    y = av;  // bit-exact branch copy; keeps soft mode identical to the
  } else if (k == real_t(0)) {
    y = bv;  // hard branches at binary boundary values
  } else {
    y = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i)
      y.data[i] = k * av.data[i] + (real_t(1) - k) * bv.data[i];
  }
  return t.record(std::move(y), {w, on_one, on_zero}, [w, on_one, on_zero](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    const real_t k2 = tp.val(w).data[0];
    const auto& av2 = tp.val(on_one).data;
    const auto& bv2 = tp.val(on_zero).data;
    auto& ga = tp.grad_mut(on_one);
    auto& gb = tp.grad_mut(on_zero);
    real_t acc = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += k2 * g[i];
      gb[i] += (real_t(1) - k2) * g[i];
      acc += (av2[i] - bv2[i]) * g[i];
    }
    tp.grad_mut(w)[0] += acc;
  });
}

NodeId slice(Tape& t, NodeId x, int offset, int len) {
  const Tensor& xv = t.val(x);
  check(xv.shape.size() == 1, "slice: 1-D input only");
  check(offset >= 0 && len > 0 && offset + len <= xv.shape[0], "slice: out of range");
  Tensor y = Tensor::zeros({len});
  std::copy(xv.data.begin() + offset, xv.data.begin() + offset + len, y.data.begin());
  return t.record(std::move(y), {x}, [x, offset, len](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad_mut(x);
    for (int i = 0; i < len; ++i) gx[static_cast<std::size_t>(offset + i)] += g[static_cast<std::size_t>(i)];
  });
}

NodeId concat(Tape& t, const std::vector<NodeId>& parts) {
  check(!parts.empty(), "concat: no parts");
  int total = 0;
  for (NodeId p : parts) {
    const Tensor& pv = t.val(p);
    check(pv.shape.size() == 1, "concat: 1-D parts only");
    total += pv.shape[0];
  }
  Tensor y = Tensor::zeros({total});
  std::size_t off = 0;
  for (NodeId p : parts) {
    const auto& d = t.val(p).data;
    std::copy(d.begin(), d.end(), y.data.begin() + off);
    off += d.size();
  }
  return t.record(std::move(y), parts, [parts](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    std::size_t off2 = 0;
    for (NodeId p : parts) {
      auto& gp = tp.grad_mut(p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off2 + i];
      off2 += gp.size();
    }
  });
}

NodeId activation(Tape& t, Act kind, NodeId x, real_t slope) {
  if (kind == Act::hard_sigm) check(slope > 0, "activation: hard_sigm slope must be positive");
  const Tensor& xv = t.val(x);
  Tensor y = xv;
  switch (kind) {
    case Act::sigm:
      for (real_t& e : y.data) e = real_t(1) / (real_t(1) + std::exp(-e));
      break;
    case Act::tanh_fn:
      for (real_t& e : y.data) e = std::tanh(e);
      break;
    case Act::relu:
      for (real_t& e : y.data) {
        t.note_kink_distance(std::fabs(static_cast<double>(e)));
        e = e > 0 ? e : real_t(0);
      }
      break;
    case Act::hard_sigm: {
      const real_t kink = real_t(1) / slope;
      for (real_t& e : y.data) {
        t.note_kink_distance(std::fabs(static_cast<double>(e - kink)));
        t.note_kink_distance(std::fabs(static_cast<double>(e + kink)));
        e = std::max(real_t(0), std::min(real_t(1), (slope * e + real_t(1)) / real_t(2)));
      }
      break;
    }
  }
  return t.record(std::move(y), {x}, [x, kind, slope](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    const auto& xv2 = tp.val(x).data;
    const auto& yv = tp.val(self).data;
    auto& gx = tp.grad_mut(x);
    switch (kind) {
      case Act::sigm:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (real_t(1) - yv[i]);
        break;
      case Act::tanh_fn:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (real_t(1) - yv[i] * yv[i]);
        break;
      case Act::relu:
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv2[i] > 0) gx[i] += g[i];
        break;
      case Act::hard_sigm: {
        const real_t kink = real_t(1) / slope;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv2[i] > -kink && xv2[i] < kink) gx[i] += g[i] * slope / real_t(2);
        break;
      }
    }
  });
}

NodeId dot(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check(av.shape.size() == 1 && bv.shape.size() == 1 && av.shape[0] == bv.shape[0],
        "dot: vectors of equal length required");
  real_t acc = 0;
  for (std::size_t i = 0; i < av.data.size(); ++i) acc += av.data[i] * bv.data[i];
  return t.record(Tensor::scalar(acc), {a, b}, [a, b](Tape& tp, NodeId self) {
    const real_t g0 = tp.grad(self)[0];
    const auto& av2 = tp.val(a).data;
    const auto& bv2 = tp.val(b).data;
    auto& ga = tp.grad_mut(a);
    auto& gb = tp.grad_mut(b);
    for (std::size_t i = 0; i < av2.size(); ++i) {
      ga[i] += g0 * bv2[i];
      gb[i] += g0 * av2[i];
    }
  });
}

NodeId sum(Tape& t, NodeId x) {
  const Tensor& xv = t.val(x);
  real_t acc = 0;
  for (real_t e : xv.data) acc += e;
  return t.record(Tensor::scalar(acc), {x}, [x](Tape& tp, NodeId self) {
    const real_t g0 = tp.grad(self)[0];
    auto& gx = tp.grad_mut(x);
    for (real_t& e : gx) e += g0;
  });
}

NodeId layer_norm(Tape& t, NodeId v, NodeId gain, NodeId bias) {
  const Tensor& vv = t.val(v);
  const Tensor& gv = t.val(gain);
  check(vv.shape.size() == 1, "layer_norm: 1-D input only");
  check(same_shape(vv, gv), "layer_norm: gain shape mismatch");
  if (bias != kNoNode) check(same_shape(vv, t.val(bias)), "layer_norm: bias shape mismatch");
  const std::size_t n = vv.data.size();

  real_t mean = 0;
  for (real_t e : vv.data) mean += e;
  mean /= static_cast<real_t>(n);
  real_t var = 0;
  for (real_t e : vv.data) var += (e - mean) * (e - mean);
  var /= static_cast<real_t>(n);
  const real_t inv = real_t(1) / std::sqrt(var + real_t(kLayerNormEps));

  Tensor y = Tensor::zeros(vv.shape);
  const real_t* bp = (bias != kNoNode) ? t.val(bias).data.data() : nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const real_t nhat = (vv.data[i] - mean) * inv;
    y.data[i] = nhat * gv.data[i] + (bp ? bp[i] : real_t(0));
  }

  std::vector<NodeId> parents = {v, gain};
  if (bias != kNoNode) parents.push_back(bias);
  return t.record(std::move(y), std::move(parents),
                  [v, gain, bias, mean, inv, n](Tape& tp, NodeId self) {
                    const auto& g = tp.grad(self);
                    const auto& vv2 = tp.val(v).data;
                    const auto& gg = tp.val(gain).data;
                    auto& gvp = tp.grad_mut(v);
                    auto& ggain = tp.grad_mut(gain);
                    // dnhat = g * gain; dv = inv * (dnhat - mean(dnhat) - nhat * mean(dnhat*nhat))
                    real_t mean_dn = 0, mean_dn_nhat = 0;
                    std::vector<real_t> nhat(n), dn(n);
                    for (std::size_t i = 0; i < n; ++i) {
                      nhat[i] = (vv2[i] - mean) * inv;
                      dn[i] = g[i] * gg[i];
                      mean_dn += dn[i];
                      mean_dn_nhat += dn[i] * nhat[i];
                    }
                    mean_dn /= static_cast<real_t>(n);
                    mean_dn_nhat /= static_cast<real_t>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                      gvp[i] += inv * (dn[i] - mean_dn - nhat[i] * mean_dn_nhat);
                      ggain[i] += g[i] * nhat[i];
                    }
                    if (bias != kNoNode) {
                      auto& gb = tp.grad_mut(bias);
                      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                    }
                  });
}

Tensor softmax_probs(const Tensor& logits) {
  if (logits.shape.size() != 1) throw std::invalid_argument("softmax: 1-D logits required");
  Tensor p = logits;
  real_t mx = p.data[0];
  for (real_t e : p.data) mx = std::max(mx, e);
  real_t z = 0;
  for (real_t& e : p.data) {
    e = std::exp(e - mx);
    z += e;
  }
  for (real_t& e : p.data) e /= z;
  return p;
}

NodeId softmax_xent(Tape& t, NodeId logits, int target) {
  const Tensor& lv = t.val(logits);
  check(lv.shape.size() == 1 && lv.shape[0] >= 2, "softmax_xent: need at least 2 classes");
  if (target < 0 || target >= lv.shape[0])
    throw std::out_of_range("softmax_xent: target class out of range");
  Tensor probs = softmax_probs(lv);
  const real_t loss = -std::log(probs.data[static_cast<std::size_t>(target)]);
  return t.record(Tensor::scalar(loss), {logits},
                  [logits, target, probs = std::move(probs)](Tape& tp, NodeId self) {
                    const real_t g0 = tp.grad(self)[0];
                    auto& gl = tp.grad_mut(logits);
                    for (std::size_t i = 0; i < gl.size(); ++i) {
                      const real_t onehot = (static_cast<int>(i) == target) ? real_t(1) : real_t(0);
                      gl[i] += g0 * (probs.data[i] - onehot);
                    }
                  });
}

}  // namespace hmlstm
