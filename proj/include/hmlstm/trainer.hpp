#ifndef HMLSTM_TRAINER_HPP
#define HMLSTM_TRAINER_HPP

#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "hmlstm/network.hpp"

namespace hmlstm {

struct TrainConfig {
  int batch = 32;
  int window = 100;
  double lr = 0.002;
  double clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double slope_rate = 0.04;
  double slope_cap = 5.0;
  double lr_decay = 50.0;
  bool decay_repeat = false;  // re-divide on every later plateau epoch
  int max_epochs = 10;
  std::uint64_t seed = 1234;

  void validate() const;
};

struct OptState {
  std::vector<Tensor> m, v;  // parallel to Model::params()
  long step = 0;
  double lr = 0;
  double slope = 1.0;
  double best_val_nll = std::numeric_limits<double>::infinity();
  bool lr_decayed = false;

  static OptState init(Model& model, double lr0);
};

// m <- b1 m + (1-b1) g ; v <- b2 v + (1-b2) g^2 ; theta -= lr * m^ / (sqrt(v^) + eps)
// with bias-corrected moments. Aborts on non-finite gradients.
void adam_step(Model& model, const std::vector<Tensor>& grads, OptState& opt,
               const TrainConfig& cfg);

// Scales every gradient by threshold/norm when the global L2 norm exceeds
// the threshold. Returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& grads, double threshold);

// a = min(cap, 1 + rate*epoch), epoch indexed from 0, constant within an epoch.
double slope_schedule(long epoch, double rate, double cap);

struct EpochRecord {
  long epoch = 0;  // 0 = pre-training validation entry
  bool has_train = false;
  double train_bpc = 0;
  double val_bpc = 0;
  double slope = 1.0;
  double lr = 0;
  std::vector<long> updates, flushes;  // per layer; empty in soft mode
};

// Deterministic JSONL serialization; the persistent training log is built
// from exactly these bytes.
std::string epoch_record_json(const EpochRecord& rec);

struct TrainSinks {
  std::ostream* log = nullptr;      // JSONL, one record per epoch
  std::ostream* console = nullptr;  // human progress, includes wall time
  std::function<void(const Model&, const OptState&, long epoch)> save_best;
  // Early stop: evaluated after each trained epoch's record is emitted.
  std::function<bool(const EpochRecord&, const Model&)> stop_when;
};

struct TrainOutcome {
  std::vector<EpochRecord> log;
  double best_val_bpc = 0;
  long best_epoch = 0;
};

// Truncated backpropagation over B contiguous lanes with h, c and z carried
// across window seams (states detached between windows, reset at epoch
// start). Per window: forward -> backward -> average over lanes -> clip ->
// Adam. The learning rate divides by lr_decay at the first epoch whose
// validation NLL fails to improve.
TrainOutcome train(Model& model, const std::vector<int>& train_stream,
                   const std::vector<int>& valid_stream, const TrainConfig& cfg,
                   const TrainSinks& sinks = {});

// Shared by trainer validation and the CLI eval command.
double evaluate_split(const Model& model, const std::vector<int>& stream, int window,
                      double slope, std::uint64_t rng_seed);

}  // namespace hmlstm

#endif
