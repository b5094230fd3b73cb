#ifndef HMLSTM_CELL_HPP
#define HMLSTM_CELL_HPP

#include <optional>

#include "hmlstm/rng.hpp"
#include "hmlstm/tape.hpp"

namespace hmlstm {

// How the boundary pre-activation becomes a boundary state:
//   step   - deterministic threshold, 1 iff z_tilde > 0.5 (strict)
//   sample - Bernoulli(z_tilde) draw
//   soft   - no binarization, z_tilde used directly
// step and sample both backpropagate with the straight-through estimator.
enum class BoundaryMode { step, sample, soft };

// Per-layer transition parameters. Layers below the top carry one extra row
// for the boundary detector (r = 1); the top layer has r = 0 and no top-down
// matrix.
struct LayerParams {
  Tensor u_recurrent;               // (4d+r) x d
  std::optional<Tensor> u_topdown;  // (4d+r) x d_above, absent at top layer
  Tensor w_bottomup;                // (4d+r) x d_below
  Tensor bias;                      // 4d+r

  // Layer-norm gains over the 4d gate/proposal rows of each summand; the
  // boundary row stays raw. Present only when the model normalizes.
  std::optional<Tensor> ln_gain_recurrent;
  std::optional<Tensor> ln_gain_topdown;
  std::optional<Tensor> ln_gain_bottomup;

  int dim() const { return u_recurrent.cols(); }
  bool has_boundary() const { return u_recurrent.rows() == 4 * dim() + 1; }
  void validate() const;
};

// Tape handles for one layer's parameters within a recording window.
struct LayerParamNodes {
  NodeId u_recurrent = kNoNode;
  NodeId u_topdown = kNoNode;
  NodeId w_bottomup = kNoNode;
  NodeId bias = kNoNode;
  NodeId ln_gain_recurrent = kNoNode;
  NodeId ln_gain_topdown = kNoNode;
  NodeId ln_gain_bottomup = kNoNode;
};

LayerParamNodes register_layer_params(Tape& t, const LayerParams& p);

// One layer's (h, c, z) at one time step, as tape nodes. z is a scalar node:
// an exact 0/1 in step and sample mode, a real in [0,1] in soft mode.
struct LayerNodes {
  NodeId h = kNoNode;
  NodeId c = kNoNode;
  NodeId z = kNoNode;
};

struct GateBundle {
  NodeId f = kNoNode;        // forget gate, sigm
  NodeId i = kNoNode;        // input gate, sigm
  NodeId o = kNoNode;        // output gate, sigm
  NodeId g = kNoNode;        // cell proposal, tanh
  NodeId z_tilde = kNoNode;  // boundary pre-binarization, hard sigm; absent at top layer
};

// s = U_rec h_prev + z_prev * (U_td h_above_prev) + z_below * (W_bu h_below) + b,
// sliced into (f, i, o, g, z_tilde) and activated as (sigm, sigm, sigm, tanh,
// hard sigm). The boundary products stay on the tape so the straight-through
// path reaches z even when a gate multiplier is exactly zero. With layer norm
// the matrix-vector products' gate rows are normalized (per-summand gain)
// before the boundary gating and summation.
GateBundle compute_gates(Tape& t, const LayerParamNodes& p, NodeId h_prev, NodeId z_prev,
                         NodeId h_below, NodeId z_below, NodeId h_above_prev, real_t slope);

// Binarization with straight-through backward: d z / d z_tilde := 1, so the
// upstream gradient lands on the hard sigmoid's own derivative. Soft mode
// returns z_tilde unchanged.
NodeId binarize(Tape& t, NodeId z_tilde, BoundaryMode mode, Rng* rng);

// One HM-LSTM layer transition. Hard modes select exactly one branch:
//   UPDATE (z_prev=0, z_below=1): c = f.c_prev + i.g, h = o.tanh(c)
//   COPY   (z_prev=0, z_below=0): states returned bit-identical, gates skipped,
//                                 z carried forward unchanged
//   FLUSH  (z_prev=1):            c = i.g, h = o.tanh(c)
// Soft mode computes the multilinear blend of the branch table, which reduces
// exactly to the hard branches at binary z. Layers without a boundary row
// carry their incoming z node (the top layer's z is pinned to 0).
LayerNodes cell_step(Tape& t, const LayerParamNodes& p, const LayerNodes& prev, NodeId h_below,
                     NodeId z_below, NodeId h_above_prev, BoundaryMode mode, real_t slope,
                     Rng* rng);

// Straight-through gradient of a binarized boundary w.r.t. its pre-activation:
// the step function contributes identity, the hard sigmoid contributes
// slope/2 inside (-1/slope, 1/slope) and 0 outside.
inline double straight_through_grad(double upstream, double preact, double slope) {
  const double kink = 1.0 / slope;
  return (preact > -kink && preact < kink) ? upstream * slope / 2.0 : 0.0;
}

}  // namespace hmlstm

#endif
