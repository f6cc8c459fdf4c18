#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "csgru/cells.hpp"
#include "csgru/errors.hpp"
#include "csgru/tensor.hpp"

namespace csgru {

// Checkpoint archive: 8-byte magic, u64-LE manifest length, JSON manifest
// (version, cell kind, mods, full architecture, parameter names and shapes),
// then one little-endian f64 payload per parameter in manifest order.

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'G', 'R', 'U', 'C', 'K', '1'};

inline std::vector<int> mods_to_list(const ModSet& m) {
  std::vector<int> out;
  if (m.mod1) out.push_back(1);
  if (m.mod2) out.push_back(2);
  if (m.mod3) out.push_back(3);
  if (m.mod4) out.push_back(4);
  return out;
}

inline ModSet mods_from_list(const std::vector<int>& list) {
  ModSet m;
  for (int v : list) {
    switch (v) {
      case 1: m.mod1 = true; break;
      case 2: m.mod2 = true; break;
      case 3: m.mod3 = true; break;
      case 4: m.mod4 = true; break;
      default: throw config_error("mods must be drawn from {1,2,3,4}, got " + std::to_string(v));
    }
  }
  return m;
}

inline nlohmann::json surrogate_to_json(const SurrogateSpec& s) {
  return {{"kind", to_string(s.kind)}, {"gamma", s.gamma}, {"v_th", s.v_th}};
}

inline SurrogateSpec surrogate_from_json(const nlohmann::json& j) {
  SurrogateSpec s;
  if (j.contains("kind")) s.kind = surrogate_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("gamma")) s.gamma = j.at("gamma").get<double>();
  if (j.contains("v_th")) s.v_th = j.at("v_th").get<double>();
  s.validate();
  return s;
}

inline nlohmann::json arch_to_json(const NetworkConfig& c) {
  nlohmann::json j;
  j["cell"] = to_string(c.kind);
  j["mods"] = mods_to_list(c.mods);
  j["surrogate"] = surrogate_to_json(c.surrogate);
  j["n_layers"] = c.n_layers;
  j["hidden"] = c.hidden;
  j["hidden_grid"] = c.hidden_grid;
  j["kernel"] = c.kernel;
  j["classes"] = c.classes;
  j["input_shape"] = c.input_shape;
  j["v_th"] = c.v_th;
  j["decay_init"] = c.decay_init;
  j["current_bias_init"] = c.current_bias_init;
  j["learn_decay"] = c.learn_decay;
  j["detach_reset"] = c.detach_reset;
  if (c.front) {
    j["front"] = {{"out_channels", c.front->out_channels},
                  {"kernel", {c.front->kh, c.front->kw}},
                  {"stride", {c.front->sy, c.front->sx}}};
  } else {
    j["front"] = nullptr;
  }
  return j;
}

inline NetworkConfig arch_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.kind = cell_kind_from_string(j.at("cell").get<std::string>());
  c.mods = mods_from_list(j.at("mods").get<std::vector<int>>());
  c.surrogate = surrogate_from_json(j.at("surrogate"));
  c.n_layers = j.at("n_layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.hidden_grid = j.at("hidden_grid").get<Shape>();
  c.kernel = j.at("kernel").get<int>();
  c.classes = j.at("classes").get<int>();
  c.input_shape = j.at("input_shape").get<Shape>();
  c.v_th = j.at("v_th").get<double>();
  c.decay_init = j.at("decay_init").get<double>();
  c.current_bias_init = j.value("current_bias_init", 0.3);
  c.learn_decay = j.at("learn_decay").get<bool>();
  c.detach_reset = j.at("detach_reset").get<bool>();
  if (j.contains("front") && !j.at("front").is_null()) {
    const auto& f = j.at("front");
    DownConvSpec d;
    d.out_channels = f.at("out_channels").get<int>();
    d.kh = f.at("kernel")[0].get<int>();
    d.kw = f.at("kernel")[1].get<int>();
    d.sy = f.at("stride")[0].get<int>();
    d.sx = f.at("stride")[1].get<int>();
    c.front = d;
  }
  return c;
}

namespace detail {

inline void write_f64_le(std::ostream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(bits >> (8 * i));
      out.write(b, 8);
    }
  }
}

inline std::vector<double> read_f64_le(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<double> out(n);
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(out.data()),
                 static_cast<std::streamsize>(n * sizeof(double))))
      throw parse_error(path + ": truncated checkpoint payload");
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8))
        throw parse_error(path + ": truncated checkpoint payload");
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
      std::memcpy(&out[i], &bits, 8);
    }
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["arch"] = arch_to_json(net.config);
  nlohmann::json params = nlohmann::json::array();
  for (const Param& p : net.params)
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  manifest["params"] = params;
  const std::string mstr = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 8);
  std::uint64_t len = mstr.size();
  char lb[8];
  for (int i = 0; i < 8; ++i) lb[i] = static_cast<char>(len >> (8 * i));
  out.write(lb, 8);
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const Param& p : net.params) detail::write_f64_le(out, p.value.data());
}

inline Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw parse_error(path + ": not a checkpoint archive");
  unsigned char lb[8];
  if (!in.read(reinterpret_cast<char*>(lb), 8)) throw parse_error(path + ": truncated header");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
  std::string mstr(len, '\0');
  if (!in.read(mstr.data(), static_cast<std::streamsize>(len)))
    throw parse_error(path + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": bad manifest: " + e.what());
  }

  Network net = build_network(arch_from_json(manifest.at("arch")), 0);
  const auto& params = manifest.at("params");
  if (params.size() != net.params.size())
    throw parse_error(path + ": manifest lists " + std::to_string(params.size()) +
                      " params, architecture has " + std::to_string(net.params.size()));
  for (std::size_t k = 0; k < net.params.size(); ++k) {
    const std::string name = params[k].at("name").get<std::string>();
    const Shape shape = params[k].at("shape").get<Shape>();
    if (name != net.params[k].name || shape != net.params[k].value.shape())
      throw parse_error(path + ": param " + std::to_string(k) + " is " + name + shape_str(shape) +
                        ", architecture expects " + net.params[k].name +
                        shape_str(net.params[k].value.shape()));
    std::vector<double> payload =
        detail::read_f64_le(in, static_cast<std::size_t>(numel(shape)), path);
    net.params[k].value = Tensor(shape, std::move(payload));
  }
  return net;
}

}  // namespace csgru
