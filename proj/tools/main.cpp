#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hmlstm/checkpoint.hpp"
#include "hmlstm/corpus.hpp"
#include "hmlstm/diagnostics.hpp"
#include "hmlstm/trainer.hpp"

using namespace hmlstm;

namespace {

constexpr std::uint64_t kEvalSalt = 0x9d2c5680e17a4b1full;

std::string resolve_corpus(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) return path;
  if (!fs::path(path).is_absolute()) {
    if (const char* dir = std::getenv("HMLSTM_DATA_DIR")) {
      fs::path joined = fs::path(dir) / path;
      if (fs::exists(joined)) return joined.string();
    }
  }
  return path;  // let the loader report the error
}

BoundaryMode parse_mode(const std::string& s) {
  if (s == "step") return BoundaryMode::step;
  if (s == "sample") return BoundaryMode::sample;
  if (s == "soft") return BoundaryMode::soft;
  throw CLI::ValidationError("--mode", "expected one of step, sample, soft");
}

std::vector<int> parse_dims(const std::string& s, int layers) {
  std::vector<int> dims;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) dims.push_back(std::stoi(item));
  if (dims.size() == 1) dims.assign(static_cast<std::size_t>(layers), dims[0]);
  if (static_cast<int>(dims.size()) != layers)
    throw CLI::ValidationError("--dims", "expected one value or one per layer");
  return dims;
}

const std::vector<int>& pick_split(const CorpusSplits& cs, const std::string& which) {
  if (which == "train") return cs.train;
  if (which == "valid") return cs.valid;
  if (which == "test") return cs.test;
  throw CLI::ValidationError("--split", "expected one of train, valid, test");
}

struct CommonModelFlags {
  int layers = 3;
  std::string dims = "128";
  int embed_dim = 128;
  int out_embed_dim = 128;
  std::string mode = "step";
  std::string layer_norm = "off";
};

void add_model_flags(CLI::App* cmd, CommonModelFlags& f) {
  cmd->add_option("--layers", f.layers, "Number of stacked layers")->capture_default_str();
  cmd->add_option("--dims", f.dims, "Hidden size per layer (single value or comma list)")
      ->capture_default_str();
  cmd->add_option("--embed-dim", f.embed_dim, "Input embedding width")->capture_default_str();
  cmd->add_option("--out-embed-dim", f.out_embed_dim, "Output embedding width")
      ->capture_default_str();
  cmd->add_option("--mode", f.mode, "Boundary decision: step, sample or soft")
      ->capture_default_str();
  cmd->add_option("--layer-norm", f.layer_norm, "Layer normalization: on or off")
      ->capture_default_str();
}

int cmd_train(const std::string& corpus_path, const std::string& splits,
              const CommonModelFlags& mf, TrainConfig tc, const std::string& out_dir) {
  CorpusSplits cs = load_and_split(resolve_corpus(corpus_path), SplitSpec::parse(splits));

  ModelConfig mc;
  mc.layers = mf.layers;
  mc.dims = parse_dims(mf.dims, mf.layers);
  mc.embed_dim = mf.embed_dim;
  mc.out_embed_dim = mf.out_embed_dim;
  mc.vocab_size = cs.vocab.size();
  mc.mode = parse_mode(mf.mode);
  mc.layer_norm = mf.layer_norm == "on";

  Model model = Model::init(mc, tc.seed);
  std::cout << "vocab " << mc.vocab_size << " symbols, " << model.param_count()
            << " parameters, train/valid/test " << cs.train.size() << "/" << cs.valid.size()
            << "/" << cs.test.size() << " chars" << std::endl;

  std::filesystem::create_directories(out_dir);
  std::ofstream log(std::filesystem::path(out_dir) / "train_log.jsonl", std::ios::trunc);
  const std::string ck_path = (std::filesystem::path(out_dir) / "best.ckpt").string();

  TrainSinks sinks;
  sinks.log = &log;
  sinks.console = &std::cout;
  sinks.save_best = [&](const Model& m, const OptState& opt, long epoch) {
    Checkpoint ck;
    ck.model = m;
    ck.vocab_symbols = cs.vocab.symbols;
    ck.seed = tc.seed;
    ck.epoch = epoch;
    ck.slope = opt.slope;
    ck.lr = opt.lr;
    ck.adam_steps = opt.step;
    ck.best_val_nll = opt.best_val_nll;
    ck.has_optimizer = true;
    ck.adam_m = opt.m;
    ck.adam_v = opt.v;
    save_checkpoint(ck_path, ck);
  };

  TrainOutcome out = train(model, cs.train, cs.valid, tc, sinks);
  std::cout << "best val " << out.best_val_bpc << " bpc at epoch " << out.best_epoch
            << "; checkpoint " << ck_path << std::endl;
  return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& corpus_path, const std::string& splits,
             const std::string& which, int window) {
  Checkpoint ck = load_checkpoint(ck_path);
  CorpusSplits cs = load_and_split(resolve_corpus(corpus_path), SplitSpec::parse(splits));
  const std::vector<int>& stream = pick_split(cs, which);
  const double nll = evaluate_split(ck.model, stream, window, ck.slope, ck.seed ^ kEvalSalt);
  std::cout << std::setprecision(12) << which << " bpc " << nll / std::log(2.0) << std::endl;
  return 0;
}

int cmd_sample(const std::string& ck_path, const std::string& prime, int n, double temperature,
               std::uint64_t seed) {
  Checkpoint ck = load_checkpoint(ck_path);
  Vocab vocab = ck.vocab();
  std::vector<int> prime_syms = vocab.encode_points(utf8_decode(prime));
  Rng rng(seed);
  std::vector<int> out = sample_text(ck.model, prime_syms, n, temperature, ck.slope, rng);
  std::cout << prime << vocab.decode_string(out) << std::endl;
  return 0;
}

int cmd_trace(const std::string& ck_path, const std::string& corpus_path,
              const std::string& splits, const std::string& which, long offset, int length,
              int width, const std::string& heatmap_out) {
  Checkpoint ck = load_checkpoint(ck_path);
  CorpusSplits cs = load_and_split(resolve_corpus(corpus_path), SplitSpec::parse(splits));
  const std::vector<int>& stream = pick_split(cs, which);
  if (offset < 0 || offset + length + 1 > static_cast<long>(stream.size()))
    throw std::invalid_argument("trace: window exceeds the chosen split");

  std::span<const int> window(stream.data() + offset, static_cast<std::size_t>(length) + 1);
  Rng rng(ck.seed ^ kEvalSalt);
  SequenceEval ev = sequence_nll(ck.model, window, initial_state(ck.model.config), ck.slope, &rng);
  ev.trace.text = cs.vocab.decode_string(std::span<const int>(ev.trace.symbols));

  std::cout << render_trace(ev.trace, width) << "\n";
  if (ck.model.config.mode != BoundaryMode::soft) {
    OpCounts oc = count_ops(ev.trace);
    std::cout << oc.summary() << "\n";
  } else {
    std::cout << "(soft mode: branch counts undefined)\n\n";
  }

  const std::string table = norm_heatmap(ev.trace);
  if (heatmap_out.empty()) {
    std::cout << table;
  } else {
    std::ofstream f(heatmap_out, std::ios::trunc);
    f << table;
    std::cout << "heatmap written to " << heatmap_out << std::endl;
  }
  return 0;
}

int cmd_gradcheck(int layers, const std::string& dims, int vocab, int probes, double eps,
                  int window, std::uint64_t seed, double tol) {
  ModelConfig mc;
  mc.layers = layers;
  mc.dims = parse_dims(dims, layers);
  mc.embed_dim = mc.dims[0];
  mc.out_embed_dim = mc.dims[0];
  mc.vocab_size = vocab;
  mc.mode = BoundaryMode::soft;
  GradcheckReport rep = gradcheck(mc, seed, probes, eps, window);
  std::cout << rep.to_string();
  const bool ok = rep.passed(tol);
  std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << tol << ")" << std::endl;
  return ok ? 0 : 1;
}

int cmd_oracle(int dim, int input_dim, int steps, int seeds, double tol) {
  double worst = 0;
  for (int s = 0; s < seeds; ++s)
    worst = std::max(worst, lstm_oracle_compare(dim, input_dim, steps, static_cast<std::uint64_t>(s)));
  std::cout << std::setprecision(6) << "cell-level max deviation over " << seeds
            << " seeds: " << worst << std::endl;

  ModelConfig mc;
  mc.layers = 3;
  mc.dims = {dim, dim, dim};
  mc.embed_dim = dim;
  mc.out_embed_dim = dim;
  mc.vocab_size = 11;
  Model m = Model::init(mc, 7);
  const double stacked = stacked_lstm_compare(m, steps, 3);
  std::cout << "stack-level max deviation over " << steps << " steps: " << stacked << std::endl;

  const bool ok = worst <= tol && stacked <= 1e-10;
  std::cout << (ok ? "PASS" : "FAIL") << std::endl;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical multiscale LSTM: character-level language modelling and diagnostics"};
  app.require_subcommand(1);

  std::string corpus_path, splits = "0.9,0.05,0.05", out_dir = "hmlstm_out";
  std::string ck_path, split_name = "test", prime, heatmap_out;
  CommonModelFlags mf;
  TrainConfig tc;
  int n_sample = 200, trace_length = 270, trace_width = 90, eval_window = 100;
  long trace_offset = 0;
  double temperature = 1.0;
  std::uint64_t sample_seed = 1234;
  int gc_layers = 2, gc_vocab = 8, gc_probes = 200, gc_window = 4;
  std::string gc_dims = "4";
  double gc_eps = 1e-5, gc_tol = 1e-5;
  int or_dim = 8, or_input = 8, or_steps = 20, or_seeds = 10;
  double or_tol = 1e-12;

  CLI::App* t = app.add_subcommand("train", "Train a model on a text corpus");
  t->add_option("--corpus", corpus_path, "Plain-text corpus file")->required();
  t->add_option("--splits", splits, "Train/valid/test fractions or character counts")
      ->capture_default_str();
  add_model_flags(t, mf);
  t->add_option("--batch", tc.batch, "Mini-batch lanes")->capture_default_str();
  t->add_option("--window", tc.window, "Truncated-backprop window length")->capture_default_str();
  t->add_option("--lr", tc.lr, "Initial learning rate")->capture_default_str();
  t->add_option("--clip", tc.clip, "Gradient norm clipping threshold")->capture_default_str();
  t->add_option("--slope-rate", tc.slope_rate, "Hard-sigmoid slope increase per epoch")
      ->capture_default_str();
  t->add_option("--slope-cap", tc.slope_cap, "Hard-sigmoid slope ceiling")->capture_default_str();
  t->add_option("--lr-decay", tc.lr_decay, "Plateau learning-rate division factor")
      ->capture_default_str();
  t->add_flag("--decay-repeat", tc.decay_repeat, "Divide again on every later plateau epoch");
  t->add_option("--epochs", tc.max_epochs, "Maximum training epochs")->capture_default_str();
  t->add_option("--seed", tc.seed, "Random seed")->capture_default_str();
  t->add_option("--out", out_dir, "Output directory for log and checkpoints")
      ->capture_default_str();

  CLI::App* e = app.add_subcommand("eval", "Report BPC of a checkpoint on a split");
  e->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
  e->add_option("--corpus", corpus_path, "Plain-text corpus file")->required();
  e->add_option("--splits", splits, "Split spec used at training time")->capture_default_str();
  e->add_option("--split", split_name, "Which split to score: train, valid or test")
      ->capture_default_str();
  e->add_option("--window", eval_window, "Evaluation window length")->capture_default_str();

  CLI::App* s = app.add_subcommand("sample", "Generate text from a checkpoint");
  s->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
  s->add_option("--prime", prime, "Priming text")->capture_default_str();
  s->add_option("--n", n_sample, "Symbols to generate")->capture_default_str();
  s->add_option("--temperature", temperature, "Softmax temperature; 0 = argmax")
      ->capture_default_str();
  s->add_option("--seed", sample_seed, "Sampling seed")->capture_default_str();

  CLI::App* tr = app.add_subcommand("trace", "Render boundary panels, op counts and norm heatmap");
  tr->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
  tr->add_option("--corpus", corpus_path, "Plain-text corpus file")->required();
  tr->add_option("--splits", splits, "Split spec used at training time")->capture_default_str();
  tr->add_option("--split", split_name, "Split to read the window from")->capture_default_str();
  tr->add_option("--offset", trace_offset, "Window start within the split")->capture_default_str();
  tr->add_option("--length", trace_length, "Window length in characters")->capture_default_str();
  tr->add_option("--width", trace_width, "Panel width in columns")->capture_default_str();
  tr->add_option("--heatmap-out", heatmap_out, "Write the norm table to a file instead of stdout");

  CLI::App* g = app.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
  g->add_option("--layers", gc_layers, "Layers in the probe model")->capture_default_str();
  g->add_option("--dims", gc_dims, "Hidden size per layer")->capture_default_str();
  g->add_option("--vocab", gc_vocab, "Probe vocabulary size")->capture_default_str();
  g->add_option("--probes", gc_probes, "Parameter coordinates to probe")->capture_default_str();
  g->add_option("--eps", gc_eps, "Central-difference step")->capture_default_str();
  g->add_option("--window", gc_window, "Probe window length")->capture_default_str();
  g->add_option("--seed", tc.seed, "Random seed")->capture_default_str();
  g->add_option("--tol", gc_tol, "Maximum allowed relative error")->capture_default_str();

  CLI::App* o = app.add_subcommand("oracle", "Forced-boundary comparison against a plain LSTM");
  o->add_option("--dim", or_dim, "Hidden size")->capture_default_str();
  o->add_option("--input-dim", or_input, "Input size")->capture_default_str();
  o->add_option("--steps", or_steps, "Steps per run")->capture_default_str();
  o->add_option("--seeds", or_seeds, "Random seeds to try")->capture_default_str();
  o->add_option("--tol", or_tol, "Maximum allowed deviation")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) return cmd_train(corpus_path, splits, mf, tc, out_dir);
    if (e->parsed()) return cmd_eval(ck_path, corpus_path, splits, split_name, eval_window);
    if (s->parsed()) return cmd_sample(ck_path, prime, n_sample, temperature, sample_seed);
    if (tr->parsed())
      return cmd_trace(ck_path, corpus_path, splits, split_name, trace_offset, trace_length,
                       trace_width, heatmap_out);
    if (g->parsed())
      return cmd_gradcheck(gc_layers, gc_dims, gc_vocab, gc_probes, gc_eps, gc_window, tc.seed,
                           gc_tol);
    if (o->parsed()) return cmd_oracle(or_dim, or_input, or_steps, or_seeds, or_tol);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << std::endl;
    return 1;
  }
  return 1;
}
