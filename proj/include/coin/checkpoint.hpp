#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coin/trainer.hpp"

namespace coin {

// Checkpoint layout (little-endian):
//   magic "COINCKPT" | u32 version | u64 json_len | json bytes
//   | u64 tensor_count | per tensor: u32 name_len, name, u64 rows, u64 cols,
//     rows*cols f64 values
// The JSON block echoes the train config plus both partition sizes.
inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'I', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  TrainConfig config;
  std::size_t num_u = 0, num_v = 0;
};

namespace detail {

inline void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little)
    throw std::runtime_error("checkpoint format requires a little-endian host");
}

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error(std::string("truncated checkpoint: ") + what);
  return v;
}

// Zero-valued model with the shapes the config implies.
inline Model zero_model(std::size_t num_u, std::size_t num_v, const TrainConfig& cfg) {
  Model m;
  m.init.u = Tensor(num_u, cfg.d);
  m.init.v = Tensor(num_v, cfg.d);
  m.encoder.d = cfg.d;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    m.encoder.layers.push_back({Tensor(cfg.d, cfg.d), Tensor(2 * cfg.d, cfg.d),
                                Tensor(cfg.d, cfg.d), Tensor(2 * cfg.d, cfg.d)});
  auto make_head = [&](std::size_t n_out) {
    ClusterHead h;
    for (std::size_t i = 0; i < cfg.head_depth; ++i) {
      std::size_t out = (i + 1 == cfg.head_depth) ? n_out : cfg.d;
      h.w.push_back(Tensor(cfg.d, out));
      h.b.push_back(Tensor(1, out));
    }
    return h;
  };
  m.heads.u = make_head(cfg.n_k);
  m.heads.v = make_head(cfg.n_l);
  m.scorer.w1 = Tensor(2 * cfg.d, cfg.d);
  m.scorer.w2 = Tensor(1, cfg.d);
  return m;
}

}  // namespace detail

inline void save_model(Model& model, const TrainConfig& config, std::size_t num_u,
                       std::size_t num_v, const std::string& path) {
  detail::require_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);

  nlohmann::json meta = config.to_json();
  meta["num_u"] = num_u;
  meta["num_v"] = num_v;
  std::string js = meta.dump();
  detail::write_pod<std::uint64_t>(out, js.size());
  out.write(js.data(), static_cast<std::streamsize>(js.size()));

  auto params = model.named_params();
  detail::write_pod<std::uint64_t>(out, params.size());
  for (auto& [name, t] : params) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint64_t>(out, t->rows());
    detail::write_pod<std::uint64_t>(out, t->cols());
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_model(const std::string& path) {
  detail::require_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  std::uint32_t version = detail::read_pod<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " (expected " + std::to_string(kCheckpointVersion) + ")");

  std::uint64_t jlen = detail::read_pod<std::uint64_t>(in, "config length");
  std::string js(jlen, '\0');
  in.read(js.data(), static_cast<std::streamsize>(jlen));
  if (!in) throw std::runtime_error("truncated checkpoint: config block");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (!meta.contains("num_u") || !meta.contains("num_v"))
    throw std::runtime_error("checkpoint config lacks partition sizes");
  Checkpoint ck;
  ck.num_u = meta.at("num_u").get<std::size_t>();
  ck.num_v = meta.at("num_v").get<std::size_t>();
  meta.erase("num_u");
  meta.erase("num_v");
  ck.config = TrainConfig::from_json(meta);
  ck.model = detail::zero_model(ck.num_u, ck.num_v, ck.config);

  std::uint64_t count = detail::read_pod<std::uint64_t>(in, "tensor count");
  auto params = ck.model.named_params();
  if (count != params.size())
    throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                             std::to_string(params.size()));
  for (auto& [name, t] : params) {
    std::uint32_t nlen = detail::read_pod<std::uint32_t>(in, "tensor name length");
    std::string fname(nlen, '\0');
    in.read(fname.data(), nlen);
    if (!in) throw std::runtime_error("truncated checkpoint: tensor name");
    if (fname != name)
      throw std::runtime_error("checkpoint tensor order mismatch: got \"" + fname +
                               "\", expected \"" + name + "\"");
    std::uint64_t rows = detail::read_pod<std::uint64_t>(in, "tensor rows");
    std::uint64_t cols = detail::read_pod<std::uint64_t>(in, "tensor cols");
    if (rows != t->rows() || cols != t->cols())
      throw std::runtime_error("checkpoint tensor \"" + name + "\" is " + std::to_string(rows) +
                               "x" + std::to_string(cols) + ", config implies " + t->shape_str());
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->numel() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: tensor \"" + name + "\"");
  }
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("checkpoint has trailing bytes: " + path);
  return ck;
}

}  // namespace coin
