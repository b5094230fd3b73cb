#include "hmlstm/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace hmlstm {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'H', 'M', 'L', 'S', 'T', 'M', '0', '1'};

const char* mode_name(BoundaryMode m) {
  switch (m) {
    case BoundaryMode::step: return "step";
    case BoundaryMode::sample: return "sample";
    case BoundaryMode::soft: return "soft";
  }
  return "step";
}

BoundaryMode mode_from_name(const std::string& s) {
  if (s == "step") return BoundaryMode::step;
  if (s == "sample") return BoundaryMode::sample;
  if (s == "soft") return BoundaryMode::soft;
  throw std::runtime_error("checkpoint: unknown boundary mode '" + s + "'");
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f64_array(std::ostream& os, const Tensor& t) {
  for (real_t v : t.data) {
    const double d = static_cast<double>(v);
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(d));
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
  }
}

void read_f64_array(std::istream& is, Tensor& t) {
  for (real_t& v : t.data) {
    const std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    v = static_cast<real_t>(d);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  auto named = const_cast<Model&>(ck.model).params();
  if (ck.has_optimizer &&
      (ck.adam_m.size() != named.size() || ck.adam_v.size() != named.size()))
    throw std::invalid_argument("checkpoint: optimizer moment count mismatch");

  const ModelConfig& cfg = ck.model.config;
  ordered_json header;
  header["version"] = 1;
  header["config"] = ordered_json{{"layers", cfg.layers},
                                  {"dims", cfg.dims},
                                  {"embed_dim", cfg.embed_dim},
                                  {"out_embed_dim", cfg.out_embed_dim},
                                  {"vocab_size", cfg.vocab_size},
                                  {"mode", mode_name(cfg.mode)},
                                  {"layer_norm", cfg.layer_norm}};
  header["vocab"] = ck.vocab_symbols;
  header["seed"] = ck.seed;
  header["epoch"] = ck.epoch;
  header["slope"] = ck.slope;
  header["lr"] = ck.lr;
  header["adam_steps"] = ck.adam_steps;
  header["best_val_nll"] = ck.best_val_nll;
  header["has_optimizer"] = ck.has_optimizer;

  ordered_json arrays = ordered_json::array();
  for (auto& np : named) arrays.push_back(ordered_json{{"name", np.name}, {"shape", np.tensor->shape}});
  if (ck.has_optimizer) {
    for (std::size_t i = 0; i < named.size(); ++i)
      arrays.push_back(ordered_json{{"name", "opt.m." + named[i].name}, {"shape", ck.adam_m[i].shape}});
    for (std::size_t i = 0; i < named.size(); ++i)
      arrays.push_back(ordered_json{{"name", "opt.v." + named[i].name}, {"shape", ck.adam_v[i].shape}});
  }
  header["arrays"] = std::move(arrays);

  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  os.write(kMagic, 8);
  write_u64(os, header_text.size());
  os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (auto& np : named) write_f64_array(os, *np.tensor);
  if (ck.has_optimizer) {
    for (const Tensor& t : ck.adam_m) write_f64_array(os, t);
    for (const Tensor& t : ck.adam_v) write_f64_array(os, t);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  const std::uint64_t header_len = read_u64(is);
  std::string header_text(header_len, '\0');
  is.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw std::runtime_error("checkpoint: truncated header in '" + path + "'");

  ordered_json header = ordered_json::parse(header_text);
  if (header.at("version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported version");

  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.layers = jc.at("layers").get<int>();
  cfg.dims = jc.at("dims").get<std::vector<int>>();
  cfg.embed_dim = jc.at("embed_dim").get<int>();
  cfg.out_embed_dim = jc.at("out_embed_dim").get<int>();
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.mode = mode_from_name(jc.at("mode").get<std::string>());
  cfg.layer_norm = jc.at("layer_norm").get<bool>();

  Checkpoint ck;
  ck.model = Model::init(cfg, 0);  // allocation only; arrays overwritten below
  ck.vocab_symbols = header.at("vocab").get<std::vector<std::uint32_t>>();
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.epoch = header.at("epoch").get<long>();
  ck.slope = header.at("slope").get<double>();
  ck.lr = header.at("lr").get<double>();
  ck.adam_steps = header.at("adam_steps").get<long>();
  ck.best_val_nll = header.at("best_val_nll").get<double>();
  ck.has_optimizer = header.at("has_optimizer").get<bool>();

  auto named = ck.model.params();
  std::size_t idx = 0;
  const auto& arrays = header.at("arrays");
  auto expect = [&](const std::string& name, const std::vector<int>& shape) {
    if (idx >= arrays.size()) throw std::runtime_error("checkpoint: array directory too short");
    const auto& e = arrays[idx++];
    if (e.at("name").get<std::string>() != name ||
        e.at("shape").get<std::vector<int>>() != shape)
      throw std::runtime_error("checkpoint: array directory mismatch at '" + name + "'");
  };

  for (auto& np : named) {
    expect(np.name, np.tensor->shape);
    read_f64_array(is, *np.tensor);
  }
  if (ck.has_optimizer) {
    for (auto& np : named) {
      expect("opt.m." + np.name, np.tensor->shape);
      Tensor t = Tensor::zeros(np.tensor->shape);
      read_f64_array(is, t);
      ck.adam_m.push_back(std::move(t));
    }
    for (auto& np : named) {
      expect("opt.v." + np.name, np.tensor->shape);
      Tensor t = Tensor::zeros(np.tensor->shape);
      read_f64_array(is, t);
      ck.adam_v.push_back(std::move(t));
    }
  }
  if (!is) throw std::runtime_error("checkpoint: truncated payload in '" + path + "'");
  return ck;
}

}  // namespace hmlstm
