#include "hmlstm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "hmlstm/corpus.hpp"
#include "hmlstm/diagnostics.hpp"

namespace hmlstm {

namespace {

constexpr std::uint64_t kEvalSalt = 0x9d2c5680e17a4b1full;
constexpr double kLn2 = 0.6931471805599453;

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void TrainConfig::validate() const {
  check(batch >= 1 && window >= 1, "TrainConfig: batch and window must be positive");
  check(lr > 0, "TrainConfig: learning rate must be positive");
  check(clip > 0, "TrainConfig: clip threshold must be positive");
  check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "TrainConfig: betas in [0,1)");
  check(adam_eps > 0, "TrainConfig: adam eps must be positive");
  check(slope_rate >= 0, "TrainConfig: slope rate must be non-negative");
  check(slope_cap >= 1, "TrainConfig: slope cap must be at least 1");
  check(lr_decay > 1, "TrainConfig: decay factor must exceed 1");
  check(max_epochs >= 0, "TrainConfig: negative epoch count");
}

OptState OptState::init(Model& model, double lr0) {
  OptState s;
  s.lr = lr0;
  for (auto& np : model.params()) {
    s.m.push_back(Tensor::zeros(np.tensor->shape));
    s.v.push_back(Tensor::zeros(np.tensor->shape));
  }
  return s;
}

double slope_schedule(long epoch, double rate, double cap) {
  check(epoch >= 0, "slope_schedule: negative epoch");
  check(rate >= 0 && cap >= 1, "slope_schedule: bad rate/cap");
  return std::min(cap, 1.0 + rate * static_cast<double>(epoch));
}

double clip_grad_norm(std::vector<Tensor>& grads, double threshold) {
  check(threshold > 0, "clip_grad_norm: threshold must be positive");
  double sq = 0;
  for (const Tensor& g : grads)
    for (real_t v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const real_t scale = static_cast<real_t>(threshold / norm);
    for (Tensor& g : grads)
      for (real_t& v : g.data) v *= scale;
  }
  return norm;
}

void adam_step(Model& model, const std::vector<Tensor>& grads, OptState& opt,
               const TrainConfig& cfg) {
  auto named = model.params();
  check(grads.size() == named.size() && opt.m.size() == named.size(),
        "adam_step: gradient/parameter count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for '" + named[i].name + "'");
    check(same_shape(grads[i], *named[i].tensor), "adam_step: gradient shape mismatch");
  }

  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor& theta = *named[i].tensor;
    Tensor& m = opt.m[i];
    Tensor& v = opt.v[i];
    for (std::size_t j = 0; j < theta.data.size(); ++j) {
      const double g = static_cast<double>(grads[i].data[j]);
      const double mj = cfg.beta1 * static_cast<double>(m.data[j]) + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * static_cast<double>(v.data[j]) + (1.0 - cfg.beta2) * g * g;
      m.data[j] = static_cast<real_t>(mj);
      v.data[j] = static_cast<real_t>(vj);
      theta.data[j] -= static_cast<real_t>(opt.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.adam_eps));
    }
  }
}

std::string epoch_record_json(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["epoch"] = rec.epoch;
  if (rec.has_train)
    j["train_bpc"] = rec.train_bpc;
  else
    j["train_bpc"] = nullptr;
  j["val_bpc"] = rec.val_bpc;
  j["slope"] = rec.slope;
  j["lr"] = rec.lr;
  j["updates"] = rec.updates;
  j["flushes"] = rec.flushes;
  return j.dump();
}

double evaluate_split(const Model& model, const std::vector<int>& stream, int window,
                      double slope, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return evaluate_stream(model, stream, window, static_cast<real_t>(slope), &rng);
}

TrainOutcome train(Model& model, const std::vector<int>& train_stream,
                   const std::vector<int>& valid_stream, const TrainConfig& cfg,
                   const TrainSinks& sinks) {
  cfg.validate();
  model.config.validate();
  check(valid_stream.size() >= 2, "train: validation split too short");
  const BatchPlan plan = plan_batches(train_stream, cfg.batch, cfg.window);
  const bool hard_mode = model.config.mode != BoundaryMode::soft;
  const int n_layers = model.config.layers;

  OptState opt = OptState::init(model, cfg.lr);
  Rng train_rng(cfg.seed);
  const std::uint64_t eval_seed = cfg.seed ^ kEvalSalt;

  TrainOutcome outcome;
  auto emit = [&](const EpochRecord& rec) {
    outcome.log.push_back(rec);
    if (sinks.log) *sinks.log << epoch_record_json(rec) << "\n";
  };

  // Pre-training validation entry; the initial model is the best so far.
  {
    const double val_nll = evaluate_split(model, valid_stream, cfg.window,
                                          slope_schedule(0, cfg.slope_rate, cfg.slope_cap), eval_seed);
    EpochRecord rec;
    rec.epoch = 0;
    rec.val_bpc = val_nll / kLn2;
    rec.slope = slope_schedule(0, cfg.slope_rate, cfg.slope_cap);
    rec.lr = opt.lr;
    emit(rec);
    opt.best_val_nll = val_nll;
    outcome.best_val_bpc = rec.val_bpc;
    outcome.best_epoch = 0;
    if (sinks.save_best) sinks.save_best(model, opt, 0);
    if (sinks.console)
      *sinks.console << "epoch 0  val " << rec.val_bpc << " bpc (initial)" << std::endl;
  }

  std::vector<Tensor> grads;
  for (auto& np : model.params()) grads.push_back(Tensor::zeros(np.tensor->shape));

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.slope = slope_schedule(epoch - 1, cfg.slope_rate, cfg.slope_cap);

    std::vector<NetworkState> lane_state(static_cast<std::size_t>(cfg.batch),
                                         initial_state(model.config));
    double epoch_nll = 0;
    long epoch_windows = 0;
    std::vector<long> updates(static_cast<std::size_t>(n_layers), 0);
    std::vector<long> flushes(static_cast<std::size_t>(n_layers), 0);

    Tape tape;
    for (long k = 0; k < plan.windows_per_lane; ++k) {
      for (Tensor& g : grads) std::fill(g.data.begin(), g.data.end(), real_t(0));
      double window_nll = 0;

      for (int lane = 0; lane < cfg.batch; ++lane) {
        tape.reset();
        ModelNodes mn = register_params(tape, model);
        WindowRun r = run_window(tape, model, mn, plan.window_span(train_stream, lane, k),
                                 lane_state[static_cast<std::size_t>(lane)],
                                 static_cast<real_t>(opt.slope), &train_rng);
        if (!std::isfinite(r.mean_nll))
          throw std::runtime_error("train: non-finite loss, aborting");
        tape.backward(r.loss);
        for (std::size_t p = 0; p < grads.size(); ++p) {
          const auto& g = tape.grad(mn.flat[p]);
          for (std::size_t j = 0; j < g.size(); ++j) grads[p].data[j] += g[j];
        }
        lane_state[static_cast<std::size_t>(lane)] = std::move(r.final_state);
        window_nll += r.mean_nll;
        if (hard_mode) {
          OpCounts oc = count_ops(r.trace);
          for (int li = 0; li < n_layers; ++li) {
            updates[static_cast<std::size_t>(li)] += oc.update[static_cast<std::size_t>(li)];
            flushes[static_cast<std::size_t>(li)] += oc.flush[static_cast<std::size_t>(li)];
          }
        }
      }

      const real_t inv_b = real_t(1) / static_cast<real_t>(cfg.batch);
      for (Tensor& g : grads)
        for (real_t& v : g.data) v *= inv_b;
      clip_grad_norm(grads, cfg.clip);
      adam_step(model, grads, opt, cfg);

      epoch_nll += window_nll / static_cast<double>(cfg.batch);
      ++epoch_windows;
    }

    const double train_nll = epoch_nll / static_cast<double>(epoch_windows);
    const double val_nll = evaluate_split(model, valid_stream, cfg.window, opt.slope, eval_seed);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.has_train = true;
    rec.train_bpc = train_nll / kLn2;
    rec.val_bpc = val_nll / kLn2;
    rec.slope = opt.slope;
    rec.lr = opt.lr;
    if (hard_mode) {
      rec.updates = updates;
      rec.flushes = flushes;
    }
    emit(rec);

    if (sinks.console) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *sinks.console << "epoch " << epoch << "  train " << rec.train_bpc << " bpc  val "
                     << rec.val_bpc << " bpc  slope " << rec.slope << "  lr " << rec.lr << "  ["
                     << secs << "s]" << std::endl;
    }

    if (val_nll < opt.best_val_nll) {
      opt.best_val_nll = val_nll;
      outcome.best_val_bpc = val_nll / kLn2;
      outcome.best_epoch = epoch;
      if (sinks.save_best) sinks.save_best(model, opt, epoch);
    } else if (!opt.lr_decayed || cfg.decay_repeat) {
      opt.lr /= cfg.lr_decay;
      opt.lr_decayed = true;
    }

    if (sinks.stop_when && sinks.stop_when(rec, model)) break;
  }
  return outcome;
}

}  // namespace hmlstm
