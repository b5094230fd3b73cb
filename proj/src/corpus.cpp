#include "hmlstm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hmlstm {

namespace {

constexpr std::uint32_t kReplacement = 0xFFFD;

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::vector<std::uint32_t> utf8_decode(std::string_view bytes) {
  std::vector<std::uint32_t> out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const unsigned char b0 = static_cast<unsigned char>(bytes[i]);
    std::uint32_t cp = 0;
    std::size_t len = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      out.push_back(kReplacement);  // stray continuation or invalid lead byte
      ++i;
      continue;
    }
    if (i + len > bytes.size()) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const unsigned char bk = static_cast<unsigned char>(bytes[i + k]);
      if ((bk & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (bk & 0x3F);
    }
    if (!ok || cp > 0x10FFFF) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(std::span<const std::uint32_t> code_points) {
  std::string out;
  out.reserve(code_points.size());
  for (std::uint32_t cp : code_points) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

Vocab Vocab::build(std::span<const std::uint32_t> train_code_points) {
  std::set<std::uint32_t> uniq(train_code_points.begin(), train_code_points.end());
  Vocab v;
  v.symbols.assign(uniq.begin(), uniq.end());  // ascending code-point order
  return v;
}

int Vocab::encode(std::uint32_t cp) const {
  auto it = std::lower_bound(symbols.begin(), symbols.end(), cp);
  if (it == symbols.end() || *it != cp) return unknown_index();
  return static_cast<int>(it - symbols.begin());
}

std::uint32_t Vocab::decode(int index) const {
  if (index < 0 || index > unknown_index()) throw std::out_of_range("Vocab: index out of range");
  if (index == unknown_index()) return kReplacement;
  return symbols[static_cast<std::size_t>(index)];
}

std::vector<int> Vocab::encode_points(std::span<const std::uint32_t> cps) const {
  std::vector<int> out;
  out.reserve(cps.size());
  for (std::uint32_t cp : cps) out.push_back(encode(cp));
  return out;
}

std::string Vocab::decode_string(std::span<const int> indices) const {
  std::vector<std::uint32_t> cps;
  cps.reserve(indices.size());
  for (int i : indices) cps.push_back(decode(i));
  return utf8_encode(cps);
}

SplitSpec SplitSpec::parse(const std::string& text) {
  std::stringstream ss(text);
  std::vector<double> vals;
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      vals.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw std::invalid_argument("splits: cannot parse '" + item + "'");
    }
  }
  check(vals.size() == 3, "splits: expected three comma-separated values");
  for (double v : vals) check(v >= 0, "splits: negative value");
  SplitSpec spec;
  spec.train = vals[0];
  spec.valid = vals[1];
  spec.test = vals[2];
  spec.counts = vals[0] > 1 || vals[1] > 1 || vals[2] > 1;
  if (!spec.counts) check(std::fabs(vals[0] + vals[1] + vals[2] - 1.0) < 1e-9,
                          "splits: fractions must sum to 1");
  return spec;
}

CorpusSplits split_text(std::span<const std::uint32_t> code_points, const SplitSpec& spec) {
  const long n = static_cast<long>(code_points.size());
  long n_train, n_valid, n_test;
  if (spec.counts) {
    n_train = static_cast<long>(spec.train);
    n_valid = static_cast<long>(spec.valid);
    n_test = static_cast<long>(spec.test);
    check(n_train + n_valid + n_test == n, "splits: counts must sum to the corpus length");
  } else {
    n_train = static_cast<long>(std::floor(spec.train * static_cast<double>(n)));
    n_valid = static_cast<long>(std::floor(spec.valid * static_cast<double>(n)));
    n_test = n - n_train - n_valid;
  }
  check(n_train > 0, "splits: empty training split");
  check(n_valid >= 0 && n_test >= 0, "splits: negative split");

  auto train_cps = code_points.subspan(0, static_cast<std::size_t>(n_train));
  auto valid_cps = code_points.subspan(static_cast<std::size_t>(n_train), static_cast<std::size_t>(n_valid));
  auto test_cps = code_points.subspan(static_cast<std::size_t>(n_train + n_valid), static_cast<std::size_t>(n_test));

  CorpusSplits out;
  out.vocab = Vocab::build(train_cps);
  out.train = out.vocab.encode_points(train_cps);
  out.valid = out.vocab.encode_points(valid_cps);
  out.test = out.vocab.encode_points(test_cps);
  return out;
}

CorpusSplits load_and_split(const std::string& path, const SplitSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("corpus: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw std::runtime_error("corpus: '" + path + "' is empty");
  std::vector<std::uint32_t> cps = utf8_decode(bytes);
  return split_text(cps, spec);
}

BatchPlan plan_batches(std::span<const int> stream, int batch, int window) {
  check(batch >= 1 && window >= 1, "plan_batches: batch and window must be positive");
  const long need = static_cast<long>(batch) * (static_cast<long>(window) + 1);
  check(static_cast<long>(stream.size()) >= need, "plan_batches: stream shorter than one window per lane");
  BatchPlan p;
  p.batch = batch;
  p.window = window;
  p.lane_len = static_cast<long>(stream.size()) / batch;
  p.windows_per_lane = (p.lane_len - 1) / window;
  return p;
}

}  // namespace hmlstm
