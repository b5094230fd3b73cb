#ifndef HMLSTM_DIAGNOSTICS_HPP
#define HMLSTM_DIAGNOSTICS_HPP

#include <string>
#include <vector>

#include "hmlstm/network.hpp"
#include "hmlstm/trace.hpp"

namespace hmlstm {

// Per-layer branch totals over a traced window. UPDATE+COPY+FLUSH sums to T
// in every layer; layer 1 never copies because z^0_t = 1.
struct OpCounts {
  std::vector<long> update, copy, flush;
  long steps = 0;

  long layer_count() const { return static_cast<long>(update.size()); }
  long update_flush_total() const;
  long update_flush_above_first() const;  // layers 2..L only
  // 1 - (UPDATE+FLUSH)/(L*T): the saving against an always-update stack.
  double reduction_ratio() const;

  std::string summary() const;
};

// Classifies each (layer, t) by the branch table using z^l_{t-1} and
// z^{l-1}_t. Requires a hard-mode trace with binary boundary values.
OpCounts count_ops(const BoundaryTrace& trace);

// Same accounting when only per-layer UPDATE+FLUSH totals are known (e.g.
// read off a published figure).
OpCounts op_counts_from_update_totals(const std::vector<long>& totals, long steps);

// Boundary rows as '#'/'.' (top layer of detectors first), the input text
// aligned underneath, wrapped into panels of `width` columns. Soft traces
// mark '#' where z > 0.5.
std::string render_trace(const BoundaryTrace& trace, int width = 90);

// L x T table of ||h^l_t||_2, tab-delimited, one row per layer for external
// plotting.
std::string norm_heatmap(const BoundaryTrace& trace);

// Finite-difference check of the whole backward path, run in soft mode where
// the graph is differentiable end to end. Probe instances are resampled when
// any activation input lands within `kink_guard` of a relu/hard-sigmoid kink.
struct GradcheckReport {
  double max_rel_err = 0;
  int probes = 0;
  int skipped = 0;
  double kink_guard = 1e-3;

  struct Item {
    std::string param;
    long index = 0;
    double analytic = 0, numeric = 0, rel_err = 0;
  };
  std::vector<Item> worst;

  bool passed(double tol) const { return skipped == 0 && max_rel_err <= tol; }
  std::string to_string() const;
};

GradcheckReport gradcheck(ModelConfig cfg, std::uint64_t seed, int probe_count, double eps,
                          int window_len = 4);

// Core probe loop over an explicit model and window. `kink_guard = false`
// disables the rejection (useful for fixtures whose activations sit exactly
// on a kink but are flat on both sides).
GradcheckReport gradcheck_model(Model& model, const std::vector<int>& window, int probe_count,
                                double eps, std::uint64_t seed, bool kink_guard = true);

// Drives one HM-LSTM layer with the bottom-up gate forced open, its own
// boundary forced off and no top-down input, against an independently coded
// plain LSTM sharing the same weight slices. Returns max |dh| U |dc| over all
// steps.
double lstm_oracle_compare(int dim, int input_dim, int steps, std::uint64_t seed);

// Stack-level variant: the whole network under the force_lstm override vs a
// plain stacked-LSTM reference with the same parameters.
double stacked_lstm_compare(const Model& m, int steps, std::uint64_t seed);

}  // namespace hmlstm

#endif
