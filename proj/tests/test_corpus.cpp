#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "hmlstm/corpus.hpp"
#include "hmlstm/rng.hpp"

using namespace hmlstm;

namespace {

std::vector<std::uint32_t> points(const std::string& s) { return utf8_decode(s); }

}  // namespace

TEST_CASE("fractional splits cut the stream in order") {
  SplitSpec spec;  // 0.9 / 0.05 / 0.05 default not used here
  spec = SplitSpec::parse("0.8,0.1,0.1");
  CorpusSplits cs = split_text(points("abcdefghij"), spec);
  CHECK(cs.train.size() == 8);
  CHECK(cs.valid.size() == 1);
  CHECK(cs.test.size() == 1);
  // contiguity over the training alphabet; 'i' and 'j' never appear in the
  // train split, so the later splits hold the unknown index
  CHECK(cs.vocab.decode_string(cs.train) == "abcdefgh");
  CHECK(cs.valid[0] == cs.vocab.unknown_index());
  CHECK(cs.test[0] == cs.vocab.unknown_index());
}

TEST_CASE("vocabulary uses ascending code points plus a reserved unknown") {
  CorpusSplits cs = split_text(points("aab"), SplitSpec::parse("1.0,0.0,0.0"));
  CHECK(cs.vocab.symbols == std::vector<std::uint32_t>{97, 98});
  CHECK(cs.vocab.encode('a') == 0);
  CHECK(cs.vocab.encode('b') == 1);
  CHECK(cs.vocab.unknown_index() == 2);
  CHECK(cs.vocab.size() == 3);
}

TEST_CASE("unseen validation characters map to the unknown index") {
  // 8 chars train ("abababab"), valid "xy" unseen in train
  CorpusSplits cs = split_text(points("ababababxy"), SplitSpec::parse("0.8,0.2,0.0"));
  CHECK(cs.valid.size() == 2);
  CHECK(cs.valid[0] == cs.vocab.unknown_index());
  CHECK(cs.valid[1] == cs.vocab.unknown_index());
}

TEST_CASE("explicit counts must sum to the corpus") {
  CHECK_NOTHROW(split_text(points("abcdefghij"), SplitSpec::parse("8,1,1")));
  CHECK_THROWS_AS(split_text(points("abcdefghij"), SplitSpec::parse("8,1,2")),
                  std::invalid_argument);
}

TEST_CASE("split spec parsing") {
  CHECK_THROWS_AS(SplitSpec::parse("0.5,0.5"), std::invalid_argument);
  CHECK_THROWS_AS(SplitSpec::parse("0.5,0.4,0.2"), std::invalid_argument);  // sums to 1.1
  CHECK_THROWS_AS(SplitSpec::parse("a,b,c"), std::invalid_argument);
  SplitSpec counts = SplitSpec::parse("90,5,5");
  CHECK(counts.counts);
}

TEST_CASE("round-trip over the training alphabet") {
  Rng rng(17);
  const std::string alphabet = "abcdefg hij.,!";
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    for (int i = 0; i < 200; ++i)
      text.push_back(alphabet[static_cast<std::size_t>(rng.uniform_index(static_cast<long>(alphabet.size())))]);
    CorpusSplits cs = split_text(points(text), SplitSpec::parse("1.0,0.0,0.0"));
    CHECK(cs.vocab.decode_string(cs.train) == text);
  }
}

TEST_CASE("utf8 decoding handles multi-byte and invalid sequences") {
  std::vector<std::uint32_t> cps = utf8_decode("a\xC3\xA9z");  // 'a', U+00E9, 'z'
  CHECK(cps == std::vector<std::uint32_t>{0x61, 0xE9, 0x7A});
  CHECK(utf8_encode(cps) == "a\xC3\xA9z");

  std::vector<std::uint32_t> bad = utf8_decode("a\xFFz");
  CHECK(bad.size() == 3);
  CHECK(bad[1] == 0xFFFD);
}

TEST_CASE("batch plan geometry from the worked example") {
  std::vector<int> stream(12, 0);
  BatchPlan p = plan_batches(stream, 2, 2);
  CHECK(p.lane_len == 6);
  CHECK(p.windows_per_lane == 2);

  // windows tile the lane prefix contiguously: window k+1 starts where k ended
  for (int lane = 0; lane < 2; ++lane)
    for (long k = 0; k + 1 < p.windows_per_lane; ++k)
      CHECK(p.window_offset(lane, k) + p.window == p.window_offset(lane, k + 1));
}

TEST_CASE("single-lane full-stream window") {
  std::vector<int> stream;
  for (int i = 0; i < 10; ++i) stream.push_back(i);
  BatchPlan p = plan_batches(stream, 1, 9);
  CHECK(p.windows_per_lane == 1);
  auto w = p.window_span(stream, 0, 0);
  CHECK(w.size() == 10);
  CHECK(w[0] == 0);
  CHECK(w[9] == 9);
}

TEST_CASE("window inputs/targets are aligned one symbol apart") {
  std::vector<int> stream;
  for (int i = 0; i < 64; ++i) stream.push_back(i);
  BatchPlan p = plan_batches(stream, 3, 5);
  for (int lane = 0; lane < 3; ++lane) {
    for (long k = 0; k < p.windows_per_lane; ++k) {
      auto w = p.window_span(stream, lane, k);
      for (std::size_t t = 0; t + 1 < w.size(); ++t) CHECK(w[t] + 1 == w[t + 1]);
    }
  }
}

TEST_CASE("lane windows reconstruct the truncated stream") {
  std::vector<int> stream;
  for (int i = 0; i < 29; ++i) stream.push_back(i);
  BatchPlan p = plan_batches(stream, 2, 3);  // lane_len 14, windows (14-1)/3 = 4
  CHECK(p.lane_len == 14);
  CHECK(p.windows_per_lane == 4);
  for (int lane = 0; lane < 2; ++lane) {
    std::vector<int> rebuilt;
    for (long k = 0; k < p.windows_per_lane; ++k) {
      auto w = p.window_span(stream, lane, k);
      rebuilt.insert(rebuilt.end(), w.begin(), w.end() - 1);  // inputs only
    }
    for (std::size_t i = 0; i < rebuilt.size(); ++i)
      CHECK(rebuilt[i] == stream[static_cast<std::size_t>(lane) * 14 + i]);
  }
}

TEST_CASE("plan_batches rejects streams below one window per lane") {
  std::vector<int> stream(5, 0);
  CHECK_THROWS_AS(plan_batches(stream, 2, 3), std::invalid_argument);
}

TEST_CASE("identical bytes give identical vocab and plan") {
  const std::string text = "the quick brown fox jumps over the lazy dog";
  CorpusSplits a = split_text(points(text), SplitSpec::parse("0.9,0.05,0.05"));
  CorpusSplits b = split_text(points(text), SplitSpec::parse("0.9,0.05,0.05"));
  CHECK(a.vocab.symbols == b.vocab.symbols);
  CHECK(a.train == b.train);
  BatchPlan pa = plan_batches(a.train, 2, 4);
  BatchPlan pb = plan_batches(b.train, 2, 4);
  CHECK(pa.lane_len == pb.lane_len);
  CHECK(pa.windows_per_lane == pb.windows_per_lane);
}

TEST_CASE("load_and_split reads files and rejects missing ones") {
  const std::string path = "corpus_test_file.txt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "hello world, hello tests";
  }
  CorpusSplits cs = load_and_split(path, SplitSpec::parse("0.8,0.1,0.1"));
  CHECK(!cs.train.empty());
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_and_split("definitely_missing_file.txt", SplitSpec::parse("0.8,0.1,0.1")),
                  std::runtime_error);
}
