#include "hmlstm/network.hpp"

#include <algorithm>
#include <cmath>

namespace hmlstm {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (real_t& v : t.data) v = static_cast<real_t>(rng.uniform(-bound, bound));
}

// fan-in is the column count: each output row sums that many products.
void init_matrix(Tensor& t, Rng& rng) { fill_uniform(t, rng, std::sqrt(1.0 / t.cols())); }
void init_vector(Tensor& t, Rng& rng) { fill_uniform(t, rng, std::sqrt(1.0 / t.shape[0])); }

// Detectors start conservative: z_tilde = hard_sigm(-0.5) = 0.25 at slope 1,
// inside the straight-through window. A 0-bias start puts the step function
// on a coin flip, and in step mode that locks into permanent firing within
// one epoch (the top-down reward is immediate, the erase penalty is not).
constexpr real_t kBoundaryBiasInit = -0.5;

}  // namespace

void ModelConfig::validate() const {
  check(layers >= 2, "ModelConfig: at least two layers required");
  check(static_cast<int>(dims.size()) == layers, "ModelConfig: dims size must equal layer count");
  for (int d : dims) check(d >= 1, "ModelConfig: layer dims must be positive");
  check(embed_dim >= 1 && out_embed_dim >= 1, "ModelConfig: embedding dims must be positive");
  check(vocab_size >= 2, "ModelConfig: vocabulary needs at least two symbols");
}

Model Model::init(ModelConfig cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model m;
  m.config = cfg;
  const int L = cfg.layers;

  m.output.embedding = Tensor::zeros({cfg.embed_dim, cfg.vocab_size});
  init_matrix(m.output.embedding, rng);

  for (int li = 0; li < L; ++li) {
    const int d = cfg.dims[static_cast<std::size_t>(li)];
    const int rows = (li + 1 < L) ? 4 * d + 1 : 4 * d;
    const int d_below = (li == 0) ? cfg.embed_dim : cfg.dims[static_cast<std::size_t>(li - 1)];

    LayerParams p;
    p.u_recurrent = Tensor::zeros({rows, d});
    init_matrix(p.u_recurrent, rng);
    if (li + 1 < L) {
      p.u_topdown = Tensor::zeros({rows, cfg.dims[static_cast<std::size_t>(li + 1)]});
      init_matrix(*p.u_topdown, rng);
    }
    p.w_bottomup = Tensor::zeros({rows, d_below});
    init_matrix(p.w_bottomup, rng);
    p.bias = Tensor::zeros({rows});
    for (int r = 0; r < d; ++r) p.bias.data[static_cast<std::size_t>(r)] = 1;  // forget rows
    if (li + 1 < L) p.bias.data[static_cast<std::size_t>(4 * d)] = kBoundaryBiasInit;
    if (cfg.layer_norm) {
      p.ln_gain_recurrent = Tensor::full({4 * d}, 1);
      if (li + 1 < L) p.ln_gain_topdown = Tensor::full({4 * d}, 1);
      p.ln_gain_bottomup = Tensor::full({4 * d}, 1);
    }
    p.validate();
    m.layers.push_back(std::move(p));
  }

  int dim_sum = 0;
  for (int d : cfg.dims) dim_sum += d;
  for (int li = 0; li < L; ++li) {
    Tensor w = Tensor::zeros({dim_sum});
    init_vector(w, rng);
    m.output.gate_w.push_back(std::move(w));
  }
  for (int li = 0; li < L; ++li) {
    Tensor w = Tensor::zeros({cfg.out_embed_dim, cfg.dims[static_cast<std::size_t>(li)]});
    init_matrix(w, rng);
    m.output.proj.push_back(std::move(w));
  }
  m.output.softmax_w = Tensor::zeros({cfg.vocab_size, cfg.out_embed_dim});
  init_matrix(m.output.softmax_w, rng);
  m.output.softmax_b = Tensor::zeros({cfg.vocab_size});
  return m;
}

std::vector<Model::NamedParam> Model::params() {
  std::vector<NamedParam> out;
  out.push_back({"embed", &output.embedding});
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const std::string pre = "layer" + std::to_string(li + 1) + ".";
    LayerParams& p = layers[li];
    out.push_back({pre + "u_rec", &p.u_recurrent});
    if (p.u_topdown) out.push_back({pre + "u_td", &*p.u_topdown});
    out.push_back({pre + "w_bu", &p.w_bottomup});
    out.push_back({pre + "bias", &p.bias});
    if (p.ln_gain_recurrent) out.push_back({pre + "ln_rec", &*p.ln_gain_recurrent});
    if (p.ln_gain_topdown) out.push_back({pre + "ln_td", &*p.ln_gain_topdown});
    if (p.ln_gain_bottomup) out.push_back({pre + "ln_bu", &*p.ln_gain_bottomup});
  }
  for (std::size_t li = 0; li < output.gate_w.size(); ++li)
    out.push_back({"out.gate" + std::to_string(li + 1), &output.gate_w[li]});
  for (std::size_t li = 0; li < output.proj.size(); ++li)
    out.push_back({"out.proj" + std::to_string(li + 1), &output.proj[li]});
  out.push_back({"out.softmax_w", &output.softmax_w});
  out.push_back({"out.softmax_b", &output.softmax_b});
  return out;
}

std::vector<const Tensor*> Model::param_values() const {
  auto named = const_cast<Model*>(this)->params();
  std::vector<const Tensor*> out;
  out.reserve(named.size());
  for (auto& np : named) out.push_back(np.tensor);
  return out;
}

std::vector<std::string> Model::param_names() const {
  auto named = const_cast<Model*>(this)->params();
  std::vector<std::string> out;
  out.reserve(named.size());
  for (auto& np : named) out.push_back(np.name);
  return out;
}

long Model::param_count() const {
  long n = 0;
  for (const Tensor* t : param_values()) n += t->numel();
  return n;
}

ModelNodes register_params(Tape& t, const Model& m) {
  ModelNodes mn;
  auto named = const_cast<Model&>(m).params();
  mn.flat.reserve(named.size());
  for (auto& np : named) mn.flat.push_back(t.leaf(*np.tensor));

  // Re-walk the registry order to hand out structured ids.
  std::size_t k = 0;
  mn.embedding = mn.flat[k++];
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const LayerParams& p = m.layers[li];
    LayerParamNodes ln;
    ln.u_recurrent = mn.flat[k++];
    if (p.u_topdown) ln.u_topdown = mn.flat[k++];
    ln.w_bottomup = mn.flat[k++];
    ln.bias = mn.flat[k++];
    if (p.ln_gain_recurrent) ln.ln_gain_recurrent = mn.flat[k++];
    if (p.ln_gain_topdown) ln.ln_gain_topdown = mn.flat[k++];
    if (p.ln_gain_bottomup) ln.ln_gain_bottomup = mn.flat[k++];
    mn.layers.push_back(ln);
  }
  for (std::size_t li = 0; li < m.output.gate_w.size(); ++li) mn.gate_w.push_back(mn.flat[k++]);
  for (std::size_t li = 0; li < m.output.proj.size(); ++li) mn.proj.push_back(mn.flat[k++]);
  mn.softmax_w = mn.flat[k++];
  mn.softmax_b = mn.flat[k++];
  return mn;
}

NetworkState initial_state(const ModelConfig& cfg) {
  NetworkState s;
  for (int li = 0; li < cfg.layers; ++li) {
    const int d = cfg.dims[static_cast<std::size_t>(li)];
    s.push_back({Tensor::zeros({d}), Tensor::zeros({d}), 0.0});
  }
  return s;
}

StateNodes register_state(Tape& t, const NetworkState& s) {
  StateNodes out;
  for (const LayerState& ls : s)
    out.layers.push_back({t.leaf(ls.h), t.leaf(ls.c), t.leaf(Tensor::scalar(static_cast<real_t>(ls.z)))});
  return out;
}

NetworkState read_state(const Tape& t, const StateNodes& s) {
  NetworkState out;
  for (const LayerNodes& ln : s.layers)
    out.push_back({t.val(ln.h), t.val(ln.c), static_cast<double>(t.val(ln.z).data[0])});
  return out;
}

NodeId embed_symbol(Tape& t, NodeId embedding, int symbol, int vocab_size) {
  const Tensor& e = t.val(embedding);
  check(e.shape.size() == 2 && e.cols() == vocab_size, "embed: embedding matrix shape mismatch");
  if (symbol < 0 || symbol >= vocab_size) throw std::out_of_range("embed: symbol out of range");
  const int ed = e.rows(), cols = e.cols();
  Tensor y = Tensor::zeros({ed});
  for (int r = 0; r < ed; ++r)
    y.data[static_cast<std::size_t>(r)] = e.data[static_cast<std::size_t>(r) * cols + symbol];
  return t.record(std::move(y), {embedding}, [embedding, symbol, cols](Tape& tp, NodeId self) {
    const auto& g = tp.grad(self);
    auto& ge = tp.grad_mut(embedding);
    for (std::size_t r = 0; r < g.size(); ++r) ge[r * cols + static_cast<std::size_t>(symbol)] += g[r];
  });
}

StepNodes network_step(Tape& t, const Model& m, const ModelNodes& mn, StateNodes& state,
                       int symbol, real_t slope, Rng* rng, BoundaryOverride ov) {
  const int L = m.config.layers;
  check(static_cast<int>(state.layers.size()) == L, "network_step: state/config layer mismatch");

  NodeId h_below = embed_symbol(t, mn.embedding, symbol, m.config.vocab_size);
  NodeId z_below = t.leaf(Tensor::scalar(1));  // z^0_t = 1: the input is never omitted
  NodeId forced_zero = kNoNode;
  if (ov == BoundaryOverride::force_lstm) forced_zero = t.leaf(Tensor::scalar(0));
  const NodeId forced_one = z_below;

  StepNodes out;
  out.h.resize(static_cast<std::size_t>(L));
  out.z.resize(static_cast<std::size_t>(L));

  // In-place upward sweep: when layer li runs, slots >= li still hold step
  // t-1 values, so the top-down input state.layers[li+1].h is the previous
  // step's hidden state.
  for (int li = 0; li < L; ++li) {
    const LayerNodes prev = state.layers[static_cast<std::size_t>(li)];
    LayerNodes next;
    if (ov == BoundaryOverride::force_lstm) {
      LayerParamNodes no_td = mn.layers[static_cast<std::size_t>(li)];
      no_td.u_topdown = kNoNode;
      no_td.ln_gain_topdown = kNoNode;
      LayerNodes forced_prev{prev.h, prev.c, forced_zero};
      next = cell_step(t, no_td, forced_prev, h_below, forced_one, kNoNode, BoundaryMode::step,
                       slope, rng);
      next.z = forced_zero;
    } else {
      NodeId h_above_prev = (li + 1 < L) ? state.layers[static_cast<std::size_t>(li + 1)].h : kNoNode;
      next = cell_step(t, mn.layers[static_cast<std::size_t>(li)], prev, h_below, z_below,
                       h_above_prev, m.config.mode, slope, rng);
    }
    state.layers[static_cast<std::size_t>(li)] = next;
    h_below = next.h;
    z_below = next.z;
    out.h[static_cast<std::size_t>(li)] = next.h;
    out.z[static_cast<std::size_t>(li)] = next.z;
  }
  return out;
}

NodeId output_logits(Tape& t, const Model& m, const ModelNodes& mn, const std::vector<NodeId>& h) {
  const int L = m.config.layers;
  check(static_cast<int>(h.size()) == L, "output_logits: need one hidden state per layer");
  NodeId hcat = concat(t, h);
  NodeId he_pre = kNoNode;
  for (int li = 0; li < L; ++li) {
    NodeId gate = activation(t, Act::sigm, dot(t, mn.gate_w[static_cast<std::size_t>(li)], hcat));
    NodeId projected = affine(t, mn.proj[static_cast<std::size_t>(li)], h[static_cast<std::size_t>(li)]);
    NodeId term = scale(t, gate, projected);
    he_pre = (li == 0) ? term : add(t, he_pre, term);
  }
  NodeId he = activation(t, Act::relu, he_pre);
  return affine(t, mn.softmax_w, he, mn.softmax_b);
}

Tensor output_distribution(const Model& m, const std::vector<Tensor>& h) {
  Tape t;
  ModelNodes mn;
  mn.embedding = kNoNode;
  for (std::size_t li = 0; li < m.output.gate_w.size(); ++li) {
    mn.gate_w.push_back(t.leaf(m.output.gate_w[li]));
    mn.proj.push_back(t.leaf(m.output.proj[li]));
  }
  mn.softmax_w = t.leaf(m.output.softmax_w);
  mn.softmax_b = t.leaf(m.output.softmax_b);
  std::vector<NodeId> hn;
  for (const Tensor& hv : h) hn.push_back(t.leaf(hv));
  return softmax_probs(t.val(output_logits(t, m, mn, hn)));
}

WindowRun run_window(Tape& t, const Model& m, const ModelNodes& mn, std::span<const int> symbols,
                     const NetworkState& init, real_t slope, Rng* rng, BoundaryOverride ov) {
  check(symbols.size() >= 2, "run_window: need at least one input/target pair");
  const int L = m.config.layers;
  const int T = static_cast<int>(symbols.size()) - 1;

  StateNodes state = register_state(t, init);
  BoundaryTrace trace;
  trace.layers = L;
  trace.mode = m.config.mode;
  for (int li = 0; li + 1 < L; ++li)
    trace.z_init.push_back(init[static_cast<std::size_t>(li)].z);
  trace.z.assign(static_cast<std::size_t>(L - 1), {});
  trace.h_norm.assign(static_cast<std::size_t>(L), {});
  trace.symbols.assign(symbols.begin(), symbols.end() - 1);

  NodeId loss_acc = kNoNode;
  for (int step = 0; step < T; ++step) {
    StepNodes sn = network_step(t, m, mn, state, symbols[static_cast<std::size_t>(step)], slope, rng, ov);
    NodeId logits = output_logits(t, m, mn, sn.h);
    NodeId nll = softmax_xent(t, logits, symbols[static_cast<std::size_t>(step) + 1]);
    loss_acc = (step == 0) ? nll : add(t, loss_acc, nll);
    for (int li = 0; li + 1 < L; ++li)
      trace.z[static_cast<std::size_t>(li)].push_back(
          static_cast<double>(t.val(sn.z[static_cast<std::size_t>(li)]).data[0]));
    for (int li = 0; li < L; ++li)
      trace.h_norm[static_cast<std::size_t>(li)].push_back(l2_norm(t.val(sn.h[static_cast<std::size_t>(li)])));
  }

  WindowRun r;
  r.loss = scale_const(t, loss_acc, real_t(1) / static_cast<real_t>(T));
  r.mean_nll = static_cast<double>(t.val(r.loss).data[0]);
  r.bpc = r.mean_nll / std::log(2.0);
  r.final_state = read_state(t, state);
  r.trace = std::move(trace);
  return r;
}

SequenceEval sequence_nll(const Model& m, std::span<const int> symbols, const NetworkState& init,
                          real_t slope, Rng* rng) {
  Tape t;
  ModelNodes mn = register_params(t, m);
  WindowRun r = run_window(t, m, mn, symbols, init, slope, rng);
  return {r.mean_nll, r.bpc, std::move(r.final_state), std::move(r.trace)};
}

double evaluate_stream(const Model& m, std::span<const int> stream, int window, real_t slope,
                       Rng* rng) {
  check(window >= 1, "evaluate_stream: window must be positive");
  check(stream.size() >= 2, "evaluate_stream: stream too short");
  NetworkState state = initial_state(m.config);
  double total_nll = 0;
  long predicted = 0;
  std::size_t pos = 0;
  while (pos + 1 < stream.size()) {
    const std::size_t chunk = std::min<std::size_t>(static_cast<std::size_t>(window) + 1,
                                                    stream.size() - pos);
    SequenceEval ev = sequence_nll(m, stream.subspan(pos, chunk), state, slope, rng);
    const long steps = static_cast<long>(chunk) - 1;
    total_nll += ev.mean_nll * static_cast<double>(steps);
    predicted += steps;
    state = std::move(ev.final_state);
    pos += static_cast<std::size_t>(steps);
  }
  return total_nll / static_cast<double>(predicted);
}

std::vector<int> sample_text(const Model& m, std::span<const int> prime, int n, double temperature,
                             real_t slope, Rng& rng) {
  m.config.validate();
  check(n >= 0, "sample_text: negative count");
  check(temperature >= 0, "sample_text: negative temperature");

  Tape t;
  ModelNodes mn = register_params(t, m);
  StateNodes state = register_state(t, initial_state(m.config));

  std::vector<int> inputs(prime.begin(), prime.end());
  if (inputs.empty()) inputs.push_back(0);  // seed symbol when no prime is given
  StepNodes last;
  for (int s : inputs) last = network_step(t, m, mn, state, s, slope, &rng);

  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    Tensor logits = t.val(output_logits(t, m, mn, last.h));
    int sym = 0;
    if (temperature == 0) {
      for (int i = 1; i < logits.shape[0]; ++i)
        if (logits.data[static_cast<std::size_t>(i)] > logits.data[static_cast<std::size_t>(sym)]) sym = i;
    } else {
      for (real_t& v : logits.data) v /= static_cast<real_t>(temperature);
      Tensor probs = softmax_probs(logits);
      const double u = rng.uniform();
      double cum = 0;
      sym = logits.shape[0] - 1;
      for (int i = 0; i < logits.shape[0]; ++i) {
        cum += static_cast<double>(probs.data[static_cast<std::size_t>(i)]);
        if (u < cum) {
          sym = i;
          break;
        }
      }
    }
    out.push_back(sym);
    if (k + 1 < n) last = network_step(t, m, mn, state, sym, slope, &rng);
  }
  return out;
}

}  // namespace hmlstm
