#ifndef HMLSTM_NETWORK_HPP
#define HMLSTM_NETWORK_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hmlstm/cell.hpp"
#include "hmlstm/trace.hpp"

namespace hmlstm {

struct ModelConfig {
  int layers = 3;
  std::vector<int> dims;  // d_l per layer, size == layers
  int embed_dim = 128;
  int out_embed_dim = 128;
  int vocab_size = 0;  // K, includes the reserved unknown index
  BoundaryMode mode = BoundaryMode::step;
  bool layer_norm = false;

  void validate() const;
};

// Output module plus the input embedding: per-layer scalar gates, per-layer
// projections into the output embedding, and the softmax classifier.
struct OutputParams {
  std::vector<Tensor> gate_w;  // L vectors over concat(h^1..h^L)
  std::vector<Tensor> proj;    // L matrices, out_embed_dim x d_l
  Tensor softmax_w;            // K x out_embed_dim
  Tensor softmax_b;            // K
  Tensor embedding;            // embed_dim x K, one column per symbol
};

struct Model {
  ModelConfig config;
  std::vector<LayerParams> layers;
  OutputParams output;

  // Weights uniform in +-sqrt(1/fan_in); forget-gate bias rows 1, all other
  // biases 0, layer-norm gains 1.
  static Model init(ModelConfig cfg, std::uint64_t seed);

  struct NamedParam {
    std::string name;
    Tensor* tensor;
  };
  std::vector<NamedParam> params();
  std::vector<const Tensor*> param_values() const;
  std::vector<std::string> param_names() const;
  long param_count() const;
};

// Tape handles for all parameters within one recording window. `flat` is
// parallel to Model::params() so gradients read back by index.
struct ModelNodes {
  std::vector<LayerParamNodes> layers;
  std::vector<NodeId> gate_w;
  std::vector<NodeId> proj;
  NodeId softmax_w = kNoNode;
  NodeId softmax_b = kNoNode;
  NodeId embedding = kNoNode;
  std::vector<NodeId> flat;
};

ModelNodes register_params(Tape& t, const Model& m);

// Recurrent state carried between windows (values, detached from any tape).
struct LayerState {
  Tensor h, c;
  double z = 0;
};
using NetworkState = std::vector<LayerState>;

// All-zero h and c, z = 0 ("mid-segment") so the first boundary is learned.
NetworkState initial_state(const ModelConfig& cfg);

// Diagnostic override: run every layer as a plain stacked-LSTM step
// (bottom-up gate forced open, own boundary forced off, top-down dropped).
enum class BoundaryOverride { none, force_lstm };

struct StateNodes {
  std::vector<LayerNodes> layers;
};

StateNodes register_state(Tape& t, const NetworkState& s);
NetworkState read_state(const Tape& t, const StateNodes& s);

// Embedding column lookup; h^0_t := column, z^0_t := 1 handled by the caller.
NodeId embed_symbol(Tape& t, NodeId embedding, int symbol, int vocab_size);

// One time step, layers evaluated bottom-up. Returns per-layer h and z nodes
// for the output module and tracing; `state` is advanced in place.
struct StepNodes {
  std::vector<NodeId> h;
  std::vector<NodeId> z;
};
StepNodes network_step(Tape& t, const Model& m, const ModelNodes& mn, StateNodes& state,
                       int symbol, real_t slope, Rng* rng,
                       BoundaryOverride ov = BoundaryOverride::none);

// Eq-11/12 head: scalar gate per layer over the concatenated hidden states,
// gated projections summed into a ReLU output embedding, then an affine map
// to K logits.
NodeId output_logits(Tape& t, const Model& m, const ModelNodes& mn, const std::vector<NodeId>& h);

// Probability vector over the next symbol for a given set of hidden states.
Tensor output_distribution(const Model& m, const std::vector<Tensor>& h);

// Forward over a window of T+1 symbols (T inputs, T next-symbol targets) on a
// caller-owned tape. loss node = mean NLL; bpc = loss / ln 2.
struct WindowRun {
  NodeId loss = kNoNode;
  double mean_nll = 0;
  double bpc = 0;
  NetworkState final_state;
  BoundaryTrace trace;
};
WindowRun run_window(Tape& t, const Model& m, const ModelNodes& mn,
                     std::span<const int> symbols, const NetworkState& init, real_t slope,
                     Rng* rng, BoundaryOverride ov = BoundaryOverride::none);

// Value-level convenience: same forward on an internal tape, no gradients.
struct SequenceEval {
  double mean_nll = 0;
  double bpc = 0;
  NetworkState final_state;
  BoundaryTrace trace;
};
SequenceEval sequence_nll(const Model& m, std::span<const int> symbols, const NetworkState& init,
                          real_t slope, Rng* rng);

// Mean NLL over a whole symbol stream, chaining windows of `window` steps
// with carried state (fresh zero state at the start).
double evaluate_stream(const Model& m, std::span<const int> stream, int window, real_t slope,
                       Rng* rng);

// Feeds `prime`, then draws `n` symbols at the given softmax temperature
// (temperature 0 = argmax, ties to the lowest index).
std::vector<int> sample_text(const Model& m, std::span<const int> prime, int n, double temperature,
                             real_t slope, Rng& rng);

}  // namespace hmlstm

#endif
