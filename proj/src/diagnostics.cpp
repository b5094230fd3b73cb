#include "hmlstm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hmlstm/corpus.hpp"

namespace hmlstm {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::string sanitize_line(const std::string& utf8, int want_len) {
  std::vector<std::uint32_t> cps = utf8_decode(utf8);
  std::string out;
  for (std::uint32_t cp : cps)
    out.push_back((cp >= 0x20 && cp <= 0x7E) ? static_cast<char>(cp) : '?');
  while (static_cast<int>(out.size()) < want_len) out.push_back('?');
  out.resize(static_cast<std::size_t>(want_len));
  return out;
}

}  // namespace

long OpCounts::update_flush_total() const {
  long n = 0;
  for (std::size_t i = 0; i < update.size(); ++i) n += update[i] + flush[i];
  return n;
}

long OpCounts::update_flush_above_first() const {
  long n = 0;
  for (std::size_t i = 1; i < update.size(); ++i) n += update[i] + flush[i];
  return n;
}

double OpCounts::reduction_ratio() const {
  const double denom = static_cast<double>(layer_count()) * static_cast<double>(steps);
  return 1.0 - static_cast<double>(update_flush_total()) / denom;
}

std::string OpCounts::summary() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < update.size(); ++i)
    os << "layer " << (i + 1) << ": UPDATE " << update[i] << "  COPY " << copy[i] << "  FLUSH "
       << flush[i] << "\n";
  os << "total UPDATE+FLUSH " << update_flush_total() << " of " << layer_count() * steps
     << " (reduction " << reduction_ratio() * 100.0 << "%)\n";
  return os.str();
}

OpCounts count_ops(const BoundaryTrace& trace) {
  if (trace.mode == BoundaryMode::soft)
    throw std::invalid_argument("count_ops: soft-mode trace has no branch table");
  const int n_layers = trace.layers;
  const int steps = trace.steps();
  check(n_layers >= 1 && steps >= 1, "count_ops: empty trace");
  check(static_cast<int>(trace.z.size()) == n_layers - 1, "count_ops: boundary row count mismatch");
  check(static_cast<int>(trace.z_init.size()) == n_layers - 1, "count_ops: missing carried-in z");

  auto as_bit = [](double v) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("count_ops: non-binary boundary value");
    return v == 1.0;
  };

  OpCounts oc;
  oc.steps = steps;
  oc.update.assign(static_cast<std::size_t>(n_layers), 0);
  oc.copy.assign(static_cast<std::size_t>(n_layers), 0);
  oc.flush.assign(static_cast<std::size_t>(n_layers), 0);

  for (int t = 1; t <= steps; ++t) {
    for (int l = 1; l <= n_layers; ++l) {
      // FLUSH whenever z^l_{t-1}=1; UPDATE on a fresh bottom-up boundary;
      // COPY otherwise. The top layer's own z is pinned to 0, z^0_t is 1.
      const bool z_prev =
          (l < n_layers)
              ? as_bit(t == 1 ? trace.z_init[static_cast<std::size_t>(l - 1)]
                              : trace.z[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(t - 2)])
              : false;
      const bool z_below =
          (l == 1) ? true
                   : as_bit(trace.z[static_cast<std::size_t>(l - 2)][static_cast<std::size_t>(t - 1)]);
      if (z_prev)
        ++oc.flush[static_cast<std::size_t>(l - 1)];
      else if (z_below)
        ++oc.update[static_cast<std::size_t>(l - 1)];
      else
        ++oc.copy[static_cast<std::size_t>(l - 1)];
    }
  }
  return oc;
}

OpCounts op_counts_from_update_totals(const std::vector<long>& totals, long steps) {
  check(!totals.empty() && steps >= 1, "op_counts_from_update_totals: empty input");
  OpCounts oc;
  oc.steps = steps;
  for (long u : totals) {
    check(u >= 0 && u <= steps, "op_counts_from_update_totals: total out of range");
    oc.update.push_back(u);  // UPDATE/FLUSH split unknown; carried as updates
    oc.flush.push_back(0);
    oc.copy.push_back(steps - u);
  }
  return oc;
}

std::string render_trace(const BoundaryTrace& trace, int width) {
  check(width >= 1, "render_trace: width must be positive");
  const int steps = trace.steps();
  const int n_layers = trace.layers;
  const std::string text = sanitize_line(trace.text, steps);

  std::ostringstream os;
  for (int start = 0; start < steps; start += width) {
    const int len = std::min(width, steps - start);
    for (int l = n_layers - 1; l >= 1; --l) {
      os << "z" << l << " | ";
      const auto& row = trace.z[static_cast<std::size_t>(l - 1)];
      for (int t = start; t < start + len; ++t)
        os << (row[static_cast<std::size_t>(t)] > 0.5 ? '#' : '.');
      os << "\n";
    }
    os << "in | " << text.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(len)) << "\n";
    if (start + width < steps) os << "\n";
  }
  return os.str();
}

std::string norm_heatmap(const BoundaryTrace& trace) {
  std::ostringstream os;
  os.precision(12);
  for (int l = 0; l < trace.layers; ++l) {
    os << "h" << (l + 1);
    for (double v : trace.h_norm[static_cast<std::size_t>(l)]) os << "\t" << v;
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Gradcheck

namespace {

struct ProbeSetup {
  Model model;
  std::vector<int> window;
};

double forward_loss(const Model& m, std::span<const int> window, double* kink_dist) {
  Tape t;
  ModelNodes mn = register_params(t, m);
  WindowRun r = run_window(t, m, mn, window, initial_state(m.config), 1.0, nullptr);
  if (kink_dist) *kink_dist = t.min_kink_distance();
  return r.mean_nll;
}

}  // namespace

std::string GradcheckReport::to_string() const {
  std::ostringstream os;
  os.precision(6);
  os << "gradcheck: " << probes << " probes, " << skipped << " skipped, max rel err "
     << max_rel_err << "\n";
  for (const Item& it : worst)
    os << "  " << it.param << "[" << it.index << "]  analytic " << it.analytic << "  numeric "
       << it.numeric << "  rel " << it.rel_err << "\n";
  return os.str();
}

GradcheckReport gradcheck_model(Model& model, const std::vector<int>& window, int probe_count,
                                double eps, std::uint64_t seed, bool kink_guard) {
  check(probe_count >= 1 && eps > 0 && window.size() >= 2, "gradcheck: bad arguments");
  check(model.config.mode == BoundaryMode::soft, "gradcheck: model must be in soft mode");

  GradcheckReport report;
  if (!kink_guard) report.kink_guard = 0;
  Rng rng(seed ^ 0x67b1c3a5u);

  {
    double kink = 0;
    forward_loss(model, window, &kink);
    if (kink < report.kink_guard) {
      report.skipped = probe_count;  // persistent kink proximity
      return report;
    }
  }

  // One analytic backward; every probe reuses these gradients.
  std::vector<Tensor> analytic;
  {
    Tape t;
    ModelNodes mn = register_params(t, model);
    WindowRun r = run_window(t, model, mn, window, initial_state(model.config), 1.0, nullptr);
    t.backward(r.loss);
    for (NodeId id : mn.flat) {
      Tensor g = t.val(id);
      g.data = t.grad(id);
      analytic.push_back(std::move(g));
    }
  }

  auto named = model.params();
  for (int p = 0; p < probe_count; ++p) {
    bool done = false;
    for (int retry = 0; retry < 10 && !done; ++retry) {
      const std::size_t pi = static_cast<std::size_t>(rng.uniform_index(static_cast<long>(named.size())));
      Tensor& tensor = *named[pi].tensor;
      const std::size_t ci = static_cast<std::size_t>(rng.uniform_index(tensor.numel()));
      const real_t saved = tensor.data[ci];

      double kink_hi = 0, kink_lo = 0;
      tensor.data[ci] = saved + static_cast<real_t>(eps);
      const double loss_hi = forward_loss(model, window, &kink_hi);
      tensor.data[ci] = saved - static_cast<real_t>(eps);
      const double loss_lo = forward_loss(model, window, &kink_lo);
      tensor.data[ci] = saved;

      if (kink_hi < report.kink_guard || kink_lo < report.kink_guard) continue;

      const double numeric = (loss_hi - loss_lo) / (2.0 * eps);
      const double ana = static_cast<double>(analytic[pi].data[ci]);
      const double rel =
          std::fabs(ana - numeric) / std::max({1e-4, std::fabs(ana), std::fabs(numeric)});
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.probes;

      GradcheckReport::Item item{named[pi].name, static_cast<long>(ci), ana, numeric, rel};
      report.worst.push_back(item);
      std::sort(report.worst.begin(), report.worst.end(),
                [](const auto& a, const auto& b) { return a.rel_err > b.rel_err; });
      if (report.worst.size() > 5) report.worst.resize(5);
      done = true;
    }
    if (!done) ++report.skipped;
  }
  return report;
}

GradcheckReport gradcheck(ModelConfig cfg, std::uint64_t seed, int probe_count, double eps,
                          int window_len) {
  cfg.mode = BoundaryMode::soft;  // the only fully differentiable path
  cfg.validate();
  check(probe_count >= 1 && eps > 0 && window_len >= 1, "gradcheck: bad arguments");

  Rng rng(seed ^ 0x67b1c3a5u);
  GradcheckReport guard_probe;

  // Draw an instance whose base forward stays clear of activation kinks.
  ProbeSetup setup;
  bool accepted = false;
  for (int attempt = 0; attempt < 20 && !accepted; ++attempt) {
    setup.model = Model::init(cfg, seed + static_cast<std::uint64_t>(attempt) * 1000003u);
    setup.window.clear();
    for (int i = 0; i < window_len + 1; ++i)
      setup.window.push_back(static_cast<int>(rng.uniform_index(cfg.vocab_size)));
    double kink = 0;
    forward_loss(setup.model, setup.window, &kink);
    accepted = kink >= guard_probe.kink_guard;
  }
  if (!accepted) {
    GradcheckReport report;
    report.skipped = probe_count;
    return report;
  }
  return gradcheck_model(setup.model, setup.window, probe_count, eps, seed);
}

// ---------------------------------------------------------------------------
// Plain-LSTM oracle (independent code path: direct loops, no tape)

namespace {

void plain_lstm_step(const LayerParams& p, const std::vector<real_t>& x, std::vector<real_t>& h,
                     std::vector<real_t>& c) {
  const int d = p.dim();
  const int nx = p.w_bottomup.cols();
  std::vector<real_t> s(static_cast<std::size_t>(4 * d), 0);
  for (int r = 0; r < 4 * d; ++r) {
    real_t acc = p.bias.data[static_cast<std::size_t>(r)];
    const real_t* urow = p.u_recurrent.data.data() + static_cast<std::size_t>(r) * d;
    for (int j = 0; j < d; ++j) acc += urow[j] * h[static_cast<std::size_t>(j)];
    const real_t* wrow = p.w_bottomup.data.data() + static_cast<std::size_t>(r) * nx;
    for (int j = 0; j < nx; ++j) acc += wrow[j] * x[static_cast<std::size_t>(j)];
    s[static_cast<std::size_t>(r)] = acc;
  }
  for (int j = 0; j < d; ++j) {
    const real_t f = real_t(1) / (real_t(1) + std::exp(-s[static_cast<std::size_t>(j)]));
    const real_t i = real_t(1) / (real_t(1) + std::exp(-s[static_cast<std::size_t>(d + j)]));
    const real_t o = real_t(1) / (real_t(1) + std::exp(-s[static_cast<std::size_t>(2 * d + j)]));
    const real_t g = std::tanh(s[static_cast<std::size_t>(3 * d + j)]);
    c[static_cast<std::size_t>(j)] = f * c[static_cast<std::size_t>(j)] + i * g;
    h[static_cast<std::size_t>(j)] = o * std::tanh(c[static_cast<std::size_t>(j)]);
  }
}

LayerParams random_layer(int dim, int input_dim, bool boundary_row, Rng& rng) {
  const int rows = 4 * dim + (boundary_row ? 1 : 0);
  LayerParams p;
  p.u_recurrent = Tensor::zeros({rows, dim});
  p.w_bottomup = Tensor::zeros({rows, input_dim});
  p.bias = Tensor::zeros({rows});
  for (real_t& v : p.u_recurrent.data) v = static_cast<real_t>(rng.uniform(-0.5, 0.5));
  for (real_t& v : p.w_bottomup.data) v = static_cast<real_t>(rng.uniform(-0.5, 0.5));
  for (real_t& v : p.bias.data) v = static_cast<real_t>(rng.uniform(-0.5, 0.5));
  return p;
}

}  // namespace

double lstm_oracle_compare(int dim, int input_dim, int steps, std::uint64_t seed) {
  Rng rng(seed);
  LayerParams p = random_layer(dim, input_dim, true, rng);

  Tape t;
  LayerParamNodes pn = register_layer_params(t, p);
  const NodeId one = t.leaf(Tensor::scalar(1));
  const NodeId zero = t.leaf(Tensor::scalar(0));
  LayerNodes state{t.leaf(Tensor::zeros({dim})), t.leaf(Tensor::zeros({dim})), zero};

  std::vector<real_t> oracle_h(static_cast<std::size_t>(dim), 0);
  std::vector<real_t> oracle_c(static_cast<std::size_t>(dim), 0);

  double max_dev = 0;
  for (int s = 0; s < steps; ++s) {
    Tensor x = Tensor::zeros({input_dim});
    for (real_t& v : x.data) v = static_cast<real_t>(rng.uniform(-1, 1));

    NodeId xn = t.leaf(x);
    // boundary overrides: z_below = 1, own z = 0, no top-down
    LayerNodes prev{state.h, state.c, zero};
    LayerNodes next = cell_step(t, pn, prev, xn, one, kNoNode, BoundaryMode::step, 1.0, nullptr);
    state = {next.h, next.c, zero};

    plain_lstm_step(p, x.data, oracle_h, oracle_c);

    for (int j = 0; j < dim; ++j) {
      max_dev = std::max(max_dev, std::fabs(static_cast<double>(t.val(next.h).data[static_cast<std::size_t>(j)]) -
                                            static_cast<double>(oracle_h[static_cast<std::size_t>(j)])));
      max_dev = std::max(max_dev, std::fabs(static_cast<double>(t.val(next.c).data[static_cast<std::size_t>(j)]) -
                                            static_cast<double>(oracle_c[static_cast<std::size_t>(j)])));
    }
  }
  return max_dev;
}

double stacked_lstm_compare(const Model& m, int steps, std::uint64_t seed) {
  Rng rng(seed);
  const int n_layers = m.config.layers;

  Tape t;
  ModelNodes mn = register_params(t, m);
  StateNodes state = register_state(t, initial_state(m.config));

  std::vector<std::vector<real_t>> ref_h, ref_c;
  for (int li = 0; li < n_layers; ++li) {
    ref_h.emplace_back(static_cast<std::size_t>(m.config.dims[static_cast<std::size_t>(li)]), 0);
    ref_c.emplace_back(static_cast<std::size_t>(m.config.dims[static_cast<std::size_t>(li)]), 0);
  }

  double max_dev = 0;
  for (int s = 0; s < steps; ++s) {
    const int symbol = static_cast<int>(rng.uniform_index(m.config.vocab_size));
    StepNodes sn = network_step(t, m, mn, state, symbol, 1.0, nullptr, BoundaryOverride::force_lstm);

    // reference: embed column, then plain LSTM per layer bottom-up
    std::vector<real_t> below(static_cast<std::size_t>(m.config.embed_dim));
    for (int r = 0; r < m.config.embed_dim; ++r)
      below[static_cast<std::size_t>(r)] =
          m.output.embedding.data[static_cast<std::size_t>(r) * m.config.vocab_size + symbol];
    for (int li = 0; li < n_layers; ++li) {
      plain_lstm_step(m.layers[static_cast<std::size_t>(li)], below, ref_h[static_cast<std::size_t>(li)],
                      ref_c[static_cast<std::size_t>(li)]);
      below = ref_h[static_cast<std::size_t>(li)];
    }

    for (int li = 0; li < n_layers; ++li) {
      const auto& hv = t.val(sn.h[static_cast<std::size_t>(li)]).data;
      for (std::size_t j = 0; j < hv.size(); ++j)
        max_dev = std::max(max_dev,
                           std::fabs(static_cast<double>(hv[j]) -
                                     static_cast<double>(ref_h[static_cast<std::size_t>(li)][j])));
    }
  }
  return max_dev;
}

}  // namespace hmlstm
