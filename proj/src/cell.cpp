#include "hmlstm/cell.hpp"

#include <cmath>

namespace hmlstm {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Normalize the 4d gate/proposal rows of a pre-activation summand, passing
// the boundary row through raw.
NodeId ln_gate_rows(Tape& t, NodeId s, NodeId gain) {
  const int rows = t.val(s).shape[0];
  const int d4 = t.val(gain).shape[0];
  if (rows == d4) return layer_norm(t, s, gain);
  NodeId gate_part = layer_norm(t, slice(t, s, 0, d4), gain);
  NodeId boundary_part = slice(t, s, d4, rows - d4);
  return concat(t, {gate_part, boundary_part});
}

}  // namespace

void LayerParams::validate() const {
  const int d = dim();
  const int rows = u_recurrent.rows();
  check(rows == 4 * d || rows == 4 * d + 1, "LayerParams: row count must be 4d or 4d+1");
  check(w_bottomup.rows() == rows, "LayerParams: bottom-up row count mismatch");
  check(bias.shape.size() == 1 && bias.shape[0] == rows, "LayerParams: bias row count mismatch");
  if (u_topdown) check(u_topdown->rows() == rows, "LayerParams: top-down row count mismatch");
  if (ln_gain_recurrent)
    check(ln_gain_recurrent->shape == std::vector<int>{4 * d}, "LayerParams: ln gain must cover 4d rows");
}

LayerParamNodes register_layer_params(Tape& t, const LayerParams& p) {
  LayerParamNodes n;
  n.u_recurrent = t.leaf(p.u_recurrent);
  if (p.u_topdown) n.u_topdown = t.leaf(*p.u_topdown);
  n.w_bottomup = t.leaf(p.w_bottomup);
  n.bias = t.leaf(p.bias);
  if (p.ln_gain_recurrent) n.ln_gain_recurrent = t.leaf(*p.ln_gain_recurrent);
  if (p.ln_gain_topdown) n.ln_gain_topdown = t.leaf(*p.ln_gain_topdown);
  if (p.ln_gain_bottomup) n.ln_gain_bottomup = t.leaf(*p.ln_gain_bottomup);
  return n;
}

GateBundle compute_gates(Tape& t, const LayerParamNodes& p, NodeId h_prev, NodeId z_prev,
                         NodeId h_below, NodeId z_below, NodeId h_above_prev, real_t slope) {
  check(slope > 0, "compute_gates: slope must be positive");
  const Tensor& u = t.val(p.u_recurrent);
  const int rows = u.rows();
  const int d = u.cols();
  const bool boundary = (rows == 4 * d + 1);

  if (p.u_topdown != kNoNode)
    check(h_above_prev != kNoNode, "compute_gates: missing top-down input for non-top layer");
  else
    check(h_above_prev == kNoNode, "compute_gates: top-down input given to a layer without one");

  NodeId s_rec = affine(t, p.u_recurrent, h_prev);
  if (p.ln_gain_recurrent != kNoNode) s_rec = ln_gate_rows(t, s_rec, p.ln_gain_recurrent);
  NodeId s = s_rec;

  if (p.u_topdown != kNoNode) {
    NodeId td = affine(t, p.u_topdown, h_above_prev);
    if (p.ln_gain_topdown != kNoNode) td = ln_gate_rows(t, td, p.ln_gain_topdown);
    s = add(t, s, scale(t, z_prev, td));
  }

  NodeId bu = affine(t, p.w_bottomup, h_below);
  if (p.ln_gain_bottomup != kNoNode) bu = ln_gate_rows(t, bu, p.ln_gain_bottomup);
  s = add(t, s, scale(t, z_below, bu));
  s = add(t, s, p.bias);

  GateBundle gates;
  gates.f = activation(t, Act::sigm, slice(t, s, 0, d));
  gates.i = activation(t, Act::sigm, slice(t, s, d, d));
  gates.o = activation(t, Act::sigm, slice(t, s, 2 * d, d));
  gates.g = activation(t, Act::tanh_fn, slice(t, s, 3 * d, d));
  if (boundary) gates.z_tilde = activation(t, Act::hard_sigm, slice(t, s, 4 * d, 1), slope);
  return gates;
}

NodeId binarize(Tape& t, NodeId z_tilde, BoundaryMode mode, Rng* rng) {
  const Tensor& zv = t.val(z_tilde);
  check(zv.is_scalar(), "binarize: z_tilde must be a scalar node");
  const real_t zt = zv.data[0];
  if (zt < 0 || zt > 1)
    throw std::runtime_error("binarize: z_tilde outside [0,1], invariant violated");
  if (mode == BoundaryMode::soft) return z_tilde;

  real_t bit;
  if (mode == BoundaryMode::step) {
    bit = zt > real_t(0.5) ? real_t(1) : real_t(0);
  } else {
    check(rng != nullptr, "binarize: sample mode requires an rng");
    bit = rng->bernoulli(static_cast<double>(zt)) ? real_t(1) : real_t(0);
  }
  return t.record(Tensor::scalar(bit), {z_tilde}, [z_tilde](Tape& tp, NodeId self) {
    tp.grad_mut(z_tilde)[0] += tp.grad(self)[0];  // straight-through
  });
}

LayerNodes cell_step(Tape& t, const LayerParamNodes& p, const LayerNodes& prev, NodeId h_below,
                     NodeId z_below, NodeId h_above_prev, BoundaryMode mode, real_t slope,
                     Rng* rng) {
  if (mode != BoundaryMode::soft) {
    const real_t zp = t.val(prev.z).data[0];
    const real_t zb = t.val(z_below).data[0];
    check((zp == 0 || zp == 1) && (zb == 0 || zb == 1),
          "cell_step: hard modes require binary z inputs");

    if (zp == 0 && zb == 0) return prev;  // COPY: nothing computed, z carried

    GateBundle gates = compute_gates(t, p, prev.h, prev.z, h_below, z_below, h_above_prev, slope);
    NodeId ig = mul(t, gates.i, gates.g);
    NodeId c = (zp == 1) ? ig                                  // FLUSH erases history
                         : add(t, mul(t, gates.f, prev.c), ig);  // UPDATE
    NodeId h = mul(t, gates.o, activation(t, Act::tanh_fn, c));
    NodeId z = (gates.z_tilde != kNoNode) ? binarize(t, gates.z_tilde, mode, rng) : prev.z;
    return {h, c, z};
  }

  GateBundle gates = compute_gates(t, p, prev.h, prev.z, h_below, z_below, h_above_prev, slope);
  NodeId ig = mul(t, gates.i, gates.g);
  NodeId updated = add(t, mul(t, gates.f, prev.c), ig);
  NodeId c = blend(t, prev.z, ig, blend(t, z_below, updated, prev.c));
  NodeId h_active = mul(t, gates.o, activation(t, Act::tanh_fn, c));
  NodeId h = blend(t, prev.z, h_active, blend(t, z_below, h_active, prev.h));
  NodeId z = (gates.z_tilde != kNoNode) ? gates.z_tilde : prev.z;
  return {h, c, z};
}

}  // namespace hmlstm
