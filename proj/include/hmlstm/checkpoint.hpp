#ifndef HMLSTM_CHECKPOINT_HPP
#define HMLSTM_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "hmlstm/corpus.hpp"
#include "hmlstm/network.hpp"

namespace hmlstm {

// Self-describing container: magic + version, a JSON header (config, vocab,
// training metadata, array directory), then raw little-endian float64
// payloads in directory order. save -> load -> save is byte-identical.
struct Checkpoint {
  Model model;
  std::vector<std::uint32_t> vocab_symbols;  // code points, index order
  std::uint64_t seed = 0;
  long epoch = 0;
  double slope = 1.0;
  double lr = 0.0;
  long adam_steps = 0;
  double best_val_nll = 0.0;
  bool has_optimizer = false;
  std::vector<Tensor> adam_m, adam_v;  // parallel to model.params()

  Vocab vocab() const {
    Vocab v;
    v.symbols = vocab_symbols;
    return v;
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hmlstm

#endif
