#ifndef HMLSTM_TAPE_HPP
#define HMLSTM_TAPE_HPP

#include <functional>
#include <limits>
#include <vector>

#include "hmlstm/tensor.hpp"

namespace hmlstm {

using NodeId = std::int32_t;
constexpr NodeId kNoNode = -1;

enum class Act { sigm, tanh_fn, relu, hard_sigm };

constexpr double kLayerNormEps = 1e-5;

// Reverse-mode tape. Every recorded op keeps its parents and a backward rule;
// parents always precede their consumers, so one reverse sweep visits each op
// exactly once and accumulates gradients additively across fan-out.
class Tape {
 public:
  // Called during the reverse sweep with the op's own output id; reads
  // grad(self) and accumulates into the parents' grads.
  using BackwardFn = std::function<void(Tape&, NodeId self)>;

  NodeId leaf(Tensor value);

  // Record an op output. Public so tests can register custom (or
  // deliberately wrong) rules.
  NodeId record(Tensor value, std::vector<NodeId> parents, BackwardFn back);

  const Tensor& val(NodeId id) const { return nodes_[check_id(id)].value; }
  const std::vector<real_t>& grad(NodeId id) const { return nodes_[check_id(id)].grad; }
  std::vector<real_t>& grad_mut(NodeId id) { return nodes_[check_id(id)].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. `loss` must be
  // a scalar node.
  void backward(NodeId loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }

  // Smallest distance of any activation input to a relu / hard-sigmoid kink
  // since reset(). Gradcheck uses this to reject probe points where the
  // subgradient convention would poison a finite-difference comparison.
  double min_kink_distance() const { return min_kink_dist_; }
  void note_kink_distance(double d) {
    if (d < min_kink_dist_) min_kink_dist_ = d;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<real_t> grad;
    std::vector<NodeId> parents;
    BackwardFn back;
  };

  std::size_t check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::invalid_argument("Tape: bad node id");
    return static_cast<std::size_t>(id);
  }

  std::vector<Node> nodes_;
  double min_kink_dist_ = std::numeric_limits<double>::infinity();
};

// ---- primitive ops -------------------------------------------------------
// Each forward registers the matching backward rule on the tape.

// y = W x (+ b). W is m-by-n, x length n, optional b length m.
// Backward: dW = g x^T, dx = W^T g, db = g.
NodeId affine(Tape& t, NodeId w, NodeId x, NodeId b = kNoNode);

NodeId add(Tape& t, NodeId a, NodeId b);           // elementwise, same shape
NodeId mul(Tape& t, NodeId a, NodeId b);           // elementwise, same shape
NodeId scale(Tape& t, NodeId s, NodeId v);         // scalar node times tensor
NodeId scale_const(Tape& t, NodeId v, real_t k);   // compile-time-ish constant

// w*on_one + (1-w)*on_zero with scalar node w. At w exactly 0 or 1 the value
// is a bit-exact copy of the selected branch.
NodeId blend(Tape& t, NodeId w, NodeId on_one, NodeId on_zero);

NodeId slice(Tape& t, NodeId x, int offset, int len);  // 1-D contiguous view copy
NodeId concat(Tape& t, const std::vector<NodeId>& parts);

// Elementwise activation. `slope` only applies to hard_sigm:
//   hard_sigm(x) = max(0, min(1, (slope*x + 1) / 2)).
// Subgradient at kinks is 0 for relu and hard_sigm.
NodeId activation(Tape& t, Act kind, NodeId x, real_t slope = 1);

NodeId dot(Tape& t, NodeId a, NodeId b);  // 1-D inner product -> scalar
NodeId sum(Tape& t, NodeId x);            // -> scalar

// (v - mean) / sqrt(var + eps) * gain (+ bias), population variance.
NodeId layer_norm(Tape& t, NodeId v, NodeId gain, NodeId bias = kNoNode);

// Stabilized cross-entropy: loss = -ln softmax(logits)[target].
// Backward: dlogits = probs - onehot(target).
NodeId softmax_xent(Tape& t, NodeId logits, int target);

// Value-level softmax with max-subtraction; shared by softmax_xent and the
// sampling path.
Tensor softmax_probs(const Tensor& logits);

}  // namespace hmlstm

#endif
