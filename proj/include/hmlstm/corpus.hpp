#ifndef HMLSTM_CORPUS_HPP
#define HMLSTM_CORPUS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hmlstm {

std::vector<std::uint32_t> utf8_decode(std::string_view bytes);
std::string utf8_encode(std::span<const std::uint32_t> code_points);

// Character table built from the training split only: symbols sorted by code
// point, plus one reserved unknown index (the last class) for characters the
// training split never produced.
struct Vocab {
  std::vector<std::uint32_t> symbols;

  static Vocab build(std::span<const std::uint32_t> train_code_points);

  int unknown_index() const { return static_cast<int>(symbols.size()); }
  int size() const { return static_cast<int>(symbols.size()) + 1; }

  int encode(std::uint32_t cp) const;
  std::uint32_t decode(int index) const;  // unknown index -> U+FFFD

  std::vector<int> encode_points(std::span<const std::uint32_t> cps) const;
  std::string decode_string(std::span<const int> indices) const;
};

// Either three fractions summing to 1 or three explicit character counts
// summing to the corpus length.
struct SplitSpec {
  double train = 0.9, valid = 0.05, test = 0.05;
  bool counts = false;

  static SplitSpec parse(const std::string& text);
};

struct CorpusSplits {
  std::vector<int> train, valid, test;
  Vocab vocab;
};

CorpusSplits split_text(std::span<const std::uint32_t> code_points, const SplitSpec& spec);
CorpusSplits load_and_split(const std::string& path, const SplitSpec& spec);

// Contiguous-lane batch geometry: the stream is reshaped into B equal lanes
// (tail truncated); lane window k+1 starts exactly where window k ended, so
// recurrent state carries over. Each window holds T inputs plus the one
// overlap symbol that is both the last target and the next window's first
// input.
struct BatchPlan {
  int batch = 0;
  int window = 0;
  long lane_len = 0;
  long windows_per_lane = 0;

  long window_offset(int lane, long k) const {
    return static_cast<long>(lane) * lane_len + k * window;
  }
  std::span<const int> window_span(std::span<const int> stream, int lane, long k) const {
    return stream.subspan(static_cast<std::size_t>(window_offset(lane, k)),
                          static_cast<std::size_t>(window) + 1);
  }
};

BatchPlan plan_batches(std::span<const int> stream, int batch, int window);

}  // namespace hmlstm

#endif
