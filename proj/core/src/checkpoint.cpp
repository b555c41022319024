#include "mattforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mattforge/error.hpp"

namespace mattforge {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json config_json(const ModelConfig& c) {
  ordered_json j;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["head_dim"] = c.head_dim;
  j["hidden"] = c.hidden();
  j["vocab_size"] = c.vocab_size;
  j["max_seq"] = c.max_seq;
  j["ffn_mult"] = c.ffn_mult;
  j["rope_base"] = c.rope_base;
  j["norm_eps"] = c.norm_eps;
  return j;
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  if (j.contains("hidden") && j["hidden"].get<int>() != c.hidden()) {
    throw Error("config hidden != n_heads * head_dim");
  }
  return c;
}

std::uint32_t swap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void write_floats(std::ofstream& out, const float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const auto bits = swap32(std::bit_cast<std::uint32_t>(data[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
}

void read_floats(const std::string& blob, std::size_t offset, float* data, std::size_t count) {
  if (offset + count * sizeof(float) > blob.size()) throw Error("weights.bin is truncated");
  std::memcpy(data, blob.data() + offset, count * sizeof(float));
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<float>(swap32(std::bit_cast<std::uint32_t>(data[i])));
    }
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig model_config_from_json(std::string_view json_text) {
  try {
    return config_from(json::parse(json_text));
  } catch (const json::exception& e) {
    throw Error(std::string("malformed model config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& dir, const Parameters<float>& params, const CheckpointInfo& info,
                     const std::map<std::string, MatrixF>& extra_tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream weights(dir / "weights.bin", std::ios::binary);
  if (!weights) throw Error("cannot write " + (dir / "weights.bin").string());

  ordered_json manifest;
  manifest["format"] = "mattforge-checkpoint";
  manifest["version"] = 1;
  manifest["tool_version"] = kToolVersion;
  manifest["kind"] = info.kind;
  manifest["seed"] = info.seed;
  manifest["step"] = info.step;
  manifest["config"] = config_json(params.config);
  auto& tensors = manifest["tensors"] = ordered_json::array();

  std::size_t offset = 0;
  auto emit = [&](const std::string& name, const float* data, Eigen::Index rows, Eigen::Index cols, bool vector) {
    const std::size_t count = static_cast<std::size_t>(rows * cols);
    ordered_json t;
    t["name"] = name;
    t["shape"] = vector ? ordered_json::array({rows}) : ordered_json::array({rows, cols});
    t["offset"] = offset;
    t["nbytes"] = count * sizeof(float);
    tensors.push_back(std::move(t));
    write_floats(weights, data, count);
    offset += count * sizeof(float);
  };
  for (const auto& ref : tensor_refs(params)) {
    const bool vector = ref.name.ends_with("norm");
    emit(ref.name, ref.data, ref.rows, ref.cols, vector);
  }
  for (const auto& [name, m] : extra_tensors) emit(name, m.data(), m.rows(), m.cols(), false);
  if (!weights) throw Error("failed writing weights.bin");

  try {
    manifest["extra"] = ordered_json::parse(info.extra_json);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint extra metadata is not JSON: ") + e.what());
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(1) << '\n';
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw Error("no manifest.json in " + dir.string());
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) throw Error("no weights.bin in " + dir.string());
  std::ostringstream blob_stream;
  blob_stream << wf.rdbuf();
  const std::string blob = blob_stream.str();

  LoadedCheckpoint out;
  try {
    const json manifest = json::parse(mf);
    if (manifest.at("format") != "mattforge-checkpoint") throw Error("not a mattforge checkpoint");
    out.info.seed = manifest.at("seed").get<std::uint64_t>();
    out.info.step = manifest.at("step").get<std::int64_t>();
    out.info.kind = manifest.value("kind", "model");
    out.info.extra_json = manifest.contains("extra") ? manifest["extra"].dump() : "{}";

    const ModelConfig config = config_from(manifest.at("config"));
    config.validate();
    std::map<std::string, json> by_name;
    for (const auto& t : manifest.at("tensors")) by_name.emplace(t.at("name").get<std::string>(), t);

    // Shapes come from the manifest; the embedding may be wider than config.vocab_size
    // for student checkpoints.
    auto shape_of = [&](const std::string& name) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw Error("checkpoint is missing tensor " + name);
      const auto& shape = it->second.at("shape");
      const Eigen::Index rows = shape.at(0).get<Eigen::Index>();
      const Eigen::Index cols = shape.size() > 1 ? shape.at(1).get<Eigen::Index>() : 1;
      return std::pair{rows, cols};
    };
    out.params.config = config;
    const int h = config.hidden();
    const int f = config.ffn_dim();
    out.params.embedding.resize(shape_of("embedding").first, h);
    for (int l = 0; l < config.n_layers; ++l) {
      LayerWeights<float> w;
      w.wq.resize(h, h);
      w.wk.resize(h, h);
      w.wv.resize(h, h);
      w.wo.resize(h, h);
      w.attn_norm.resize(h);
      w.ffn_norm.resize(h);
      w.w_up.resize(h, f);
      w.w_down.resize(f, h);
      out.params.layers.push_back(std::move(w));
    }
    out.params.final_norm.resize(h);

    for (auto& ref : tensor_refs(out.params)) {
      const auto [rows, cols] = shape_of(ref.name);
      if (rows != ref.rows || cols != ref.cols) throw Error("tensor " + ref.name + " has an unexpected shape");
      const auto& t = by_name.at(ref.name);
      read_floats(blob, t.at("offset").get<std::size_t>(), ref.data, static_cast<std::size_t>(ref.size()));
      by_name.erase(ref.name);
    }
    for (const auto& [name, t] : by_name) {
      const auto [rows, cols] = shape_of(name);
      MatrixF m(rows, cols);
      read_floats(blob, t.at("offset").get<std::size_t>(), m.data(), static_cast<std::size_t>(m.size()));
      out.extra_tensors.emplace(name, std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (!out.params.all_finite()) throw Error("checkpoint contains non-finite weights");
  return out;
}

std::uint64_t parameter_fingerprint(const Parameters<float>& params) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& ref : tensor_refs(params)) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(ref.data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(ref.size()) * sizeof(float); ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

}  // namespace mattforge
