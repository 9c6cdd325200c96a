#pragma once

// Checkpoint container:
//   "PGAN" | u32 version (LE) | u32 header length (LE) | UTF-8 JSON header |
//   float32 LE blobs in the order of header["tensors"].

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "porogan/error.hpp"
#include "porogan/gan.hpp"

namespace porogan {

inline constexpr std::uint32_t checkpoint_version = 1;
inline constexpr char checkpoint_magic[4] = {'P', 'G', 'A', 'N'};

inline nlohmann::json to_json(const GanConfig& c) {
  return {
      {"training_size", c.training_size},
      {"nz", c.nz},
      {"ng", c.ng},
      {"nd", c.nd},
      {"learning_rate", c.learning_rate},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"adam_epsilon", c.adam_epsilon},
      {"stabilization", to_string(c.stabilization)},
      {"batch_size", c.batch_size},
      {"d_steps_per_g_step", c.d_steps_per_g_step},
      {"seed", c.seed},
      {"head", head_name(c.head)},
      {"leaky_slope", c.leaky_slope},
      {"init_std", c.init_std},
      {"bn_momentum", c.bn_momentum},
      {"bn_eps", c.bn_eps},
  };
}

inline GanConfig gan_config_from_json(const nlohmann::json& j) {
  GanConfig c;
  try {
    c.training_size = j.at("training_size").get<std::size_t>();
    c.nz = j.at("nz").get<std::size_t>();
    c.ng = j.at("ng").get<std::size_t>();
    c.nd = j.at("nd").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
    c.stabilization = parse_stabilization(j.at("stabilization").get<std::string>());
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.d_steps_per_g_step = j.at("d_steps_per_g_step").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.head = parse_head(j.at("head").get<std::string>());
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.init_std = j.at("init_std").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.bn_eps = j.at("bn_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_checkpoint, std::string("bad config block: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

struct NamedTensor {
  std::string name;
  Tensor5<float>* tensor;
};

/// Every persisted tensor of a trainer in file order.
inline std::vector<NamedTensor> checkpoint_tensors(Trainer<float>& tr) {
  std::vector<NamedTensor> out;
  auto add_net = [&](const std::string& prefix, Sequential<float>& net) {
    for (auto& [name, p] : net.parameters()) {
      out.push_back({prefix + name + "/value", &p->value});
      out.push_back({prefix + name + "/adam_m", &p->adam_m});
      out.push_back({prefix + name + "/adam_v", &p->adam_v});
    }
    for (auto& [name, b] : net.buffers()) out.push_back({prefix + name, b});
  };
  add_net("generator.", tr.generator().net);
  add_net("discriminator.", tr.discriminator().net);
  return out;
}

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<std::size_t> step_counts(Sequential<float>& net) {
  std::vector<std::size_t> s;
  for (auto& [name, p] : net.parameters()) s.push_back(p->step_count);
  return s;
}

}  // namespace detail

inline std::string encode_checkpoint(Trainer<float>& tr, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header;
  header["config"] = to_json(tr.config());
  auto tensors = detail::checkpoint_tensors(tr);
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor->shape()}});
  const auto& st = tr.state();
  std::vector<nlohmann::json> previews;
  for (const auto& p : st.previews) previews.push_back({{"iteration", p.iteration}, {"porosity", p.porosity}});
  header["state"] = {
      {"iteration", st.iteration},
      {"d_steps", st.d_steps},
      {"loss_d", st.loss_d},
      {"loss_g", st.loss_g},
      {"previews", previews},
      {"rng", tr.rng_state()},
      {"generator_steps", detail::step_counts(tr.generator().net)},
      {"discriminator_steps", detail::step_counts(tr.discriminator().net)},
  };
  header["extra"] = extra;
  const std::string text = header.dump();

  std::string out(checkpoint_magic, 4);
  detail::put_u32(out, checkpoint_version);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : tensors)
    for (float v : t.tensor->values()) detail::append_f32_le(out, v);
  return out;
}

inline void save_checkpoint(Trainer<float>& tr, const std::filesystem::path& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  detail::write_file_atomic(path, encode_checkpoint(tr, extra));
}

struct LoadedCheckpoint {
  std::unique_ptr<Trainer<float>> trainer;
  nlohmann::json extra;
};

inline LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  require(bytes.size() >= 12, Errc::corrupt_checkpoint, "file too short for a checkpoint header");
  require(std::memcmp(bytes.data(), checkpoint_magic, 4) == 0, Errc::corrupt_checkpoint, "bad magic");
  const std::uint32_t version = detail::get_u32(p + 4);
  require(version == checkpoint_version, Errc::unsupported_version,
          "checkpoint version " + std::to_string(version) + " is not supported");
  const std::uint32_t hlen = detail::get_u32(p + 8);
  require(12ull + hlen <= bytes.size(), Errc::corrupt_checkpoint, "header extends past end of file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_checkpoint, std::string("unreadable header: ") + e.what());
  }
  require(header.contains("config") && header.contains("tensors") && header.contains("state"),
          Errc::corrupt_checkpoint, "header lacks config, tensors or state");

  LoadedCheckpoint out;
  out.trainer = std::make_unique<Trainer<float>>(gan_config_from_json(header["config"]));
  auto& tr = *out.trainer;
  auto tensors = detail::checkpoint_tensors(tr);
  const auto& table = header["tensors"];
  require(table.is_array() && table.size() == tensors.size(), Errc::shape,
          "shape table lists " + std::to_string(table.is_array() ? table.size() : 0) + " tensors, expected " +
              std::to_string(tensors.size()));
  std::size_t total = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Shape5 shape{};
    try {
      require(table[i].at("name").get<std::string>() == tensors[i].name, Errc::shape,
              "tensor " + std::to_string(i) + " is " + table[i].at("name").get<std::string>() + ", expected " +
                  tensors[i].name);
      shape = table[i].at("shape").get<Shape5>();
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::corrupt_checkpoint, std::string("bad shape table: ") + e.what());
    }
    require(shape == tensors[i].tensor->shape(), Errc::shape,
            tensors[i].name + " has shape " + shape_string(shape) + ", expected " +
                shape_string(tensors[i].tensor->shape()));
    total += shape_count(shape);
  }
  require(bytes.size() == 12ull + hlen + 4 * total, Errc::corrupt_checkpoint,
          "blob section holds " + std::to_string(bytes.size() - 12 - hlen) + " bytes, expected " +
              std::to_string(4 * total));
  const unsigned char* blob = p + 12 + hlen;
  for (auto& t : tensors)
    for (auto& v : t.tensor->values()) {
      v = detail::read_f32_le(blob);
      blob += 4;
    }

  try {
    const auto& st = header["state"];
    auto& s = tr.state();
    s.iteration = st.at("iteration").get<std::size_t>();
    s.d_steps = st.at("d_steps").get<std::size_t>();
    s.loss_d = st.at("loss_d").get<std::vector<double>>();
    s.loss_g = st.at("loss_g").get<std::vector<double>>();
    for (const auto& p : st.at("previews")) s.previews.push_back({p.at("iteration"), p.at("porosity")});
    tr.set_rng_state(st.at("rng").get<std::string>());
    auto restore_steps = [](Sequential<float>& net, const std::vector<std::size_t>& steps) {
      auto params = net.parameters();
      require(steps.size() == params.size(), Errc::corrupt_checkpoint, "step table size mismatch");
      for (std::size_t i = 0; i < steps.size(); ++i) params[i].second->step_count = steps[i];
    };
    restore_steps(tr.generator().net, st.at("generator_steps").get<std::vector<std::size_t>>());
    restore_steps(tr.discriminator().net, st.at("discriminator_steps").get<std::vector<std::size_t>>());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_checkpoint, std::string("bad state block: ") + e.what());
  }
  out.extra = header.value("extra", nlohmann::json::object());
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto bytes = detail::read_file(path);
  return decode_checkpoint({bytes.data(), bytes.size()});
}

}  // namespace porogan
