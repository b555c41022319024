#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "mattforge/checkpoint.hpp"
#include "mattforge/error.hpp"

namespace mattforge::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads `key` into `target` when present, then forgets it so leftovers can be
// reported as unknown.
template <typename T>
void take(json& obj, const char* key, T& target, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    target = it->get<T>();
  } catch (const json::exception&) {
    throw Error("config: bad value for " + where + key);
  }
  obj.erase(it);
}

void reject_leftovers(const json& obj, const std::string& where) {
  if (!obj.empty()) throw Error("config: unknown key " + where + obj.begin().key());
}

json section(json& root, const char* key) {
  auto it = root.find(key);
  if (it == root.end()) return json::object();
  if (!it->is_object()) throw Error(std::string("config: ") + key + " must be an object");
  json copy = *it;
  root.erase(it);
  return copy;
}

ordered_json train_to_json(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"weight_decay", t.weight_decay},
          {"batch_docs", t.batch_docs},
          {"max_teacher_tokens", t.max_teacher_tokens},
          {"steps", t.steps},
          {"freeze_overlap", t.freeze_overlap},
          {"checkpoint_every", t.checkpoint_every},
          {"log_every", t.log_every},
          {"eval_every", t.eval_every},
          {"warmup_steps", t.warmup_steps},
          {"skip_no_new", t.skip_no_new},
          {"threads", t.threads}};
}

void train_from_json(json obj, TrainConfig& t, const std::string& where) {
  take(obj, "lr", t.lr, where);
  take(obj, "beta1", t.beta1, where);
  take(obj, "beta2", t.beta2, where);
  take(obj, "eps", t.eps, where);
  take(obj, "weight_decay", t.weight_decay, where);
  take(obj, "batch_docs", t.batch_docs, where);
  take(obj, "max_teacher_tokens", t.max_teacher_tokens, where);
  take(obj, "steps", t.steps, where);
  take(obj, "freeze_overlap", t.freeze_overlap, where);
  take(obj, "checkpoint_every", t.checkpoint_every, where);
  take(obj, "log_every", t.log_every, where);
  take(obj, "eval_every", t.eval_every, where);
  take(obj, "warmup_steps", t.warmup_steps, where);
  take(obj, "skip_no_new", t.skip_no_new, where);
  take(obj, "threads", t.threads, where);
  reject_leftovers(obj, where);
}

std::string objective_name(AimObjective o) { return o == AimObjective::Full ? "aim" : "aim-star"; }
std::string kernel_name(AimKernel k) { return k == AimKernel::Mse ? "mse" : "cosine"; }
std::string layer_mode_name(TraceLayers m) { return m == TraceLayers::LastOnly ? "last" : "all"; }
std::string heads_name(HeadReduction h) { return h == HeadReduction::Concat ? "concat" : "per-head-mean"; }

}  // namespace

RunConfig::RunConfig() {
  pretrain.lr = 1e-3;
  pretrain.batch_docs = 2;
  pretrain.steps = 20000;
  pretrain.warmup_steps = 500;
  pretrain.log_every = 500;
  pretrain.freeze_overlap = false;
  train.steps = 3000;
  train.log_every = 100;
  aim.depth_n = 2;
}

std::string to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["base_vocab_size"] = c.base_vocab_size;
  j["addon_vocab_size"] = c.addon_vocab_size;
  j["model"] = json::parse(model_config_to_json(c.model));
  j["pretrain"] = train_to_json(c.pretrain);
  j["train"] = train_to_json(c.train);
  j["aim"] = {{"depth_n", c.aim.depth_n},
              {"layer_mode", layer_mode_name(c.aim.layer_mode)},
              {"objective", objective_name(c.aim.objective)},
              {"kernel", kernel_name(c.aim.kernel)},
              {"heads", heads_name(c.aim.heads)}};
  j["init"] = {{"strategy", std::string(to_string(c.init))},
               {"k", c.focus.k},
               {"temperature", c.focus.temperature},
               {"aux_dim", c.aux.dim},
               {"window", c.aux.window}};
  j["paths"] = {{"train_corpus", c.paths.train_corpus}, {"eval_corpus", c.paths.eval_corpus},
                {"base_vocab", c.paths.base_vocab},     {"ext_vocab", c.paths.ext_vocab},
                {"teacher", c.paths.teacher},           {"init", c.paths.init},
                {"aux", c.paths.aux},                   {"out", c.paths.out}};
  return j.dump(2);
}

void merge_json(RunConfig& c, std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw Error("config: top level must be an object");
  if (root.contains("config") && root["config"].is_object()) root = root["config"];

  take(root, "seed", c.seed, "");
  take(root, "base_vocab_size", c.base_vocab_size, "");
  take(root, "addon_vocab_size", c.addon_vocab_size, "");

  if (auto model = section(root, "model"); !model.empty()) {
    json merged = json::parse(model_config_to_json(c.model));
    // `hidden` is derived; only check it when the overlay states it.
    merged["hidden"] = nullptr;
    for (auto& [k, v] : model.items()) {
      if (!merged.contains(k)) throw Error("config: unknown key model." + k);
      merged[k] = v;
    }
    if (merged["hidden"].is_null()) merged.erase("hidden");
    c.model = model_config_from_json(merged.dump());
  }
  train_from_json(section(root, "pretrain"), c.pretrain, "pretrain.");
  train_from_json(section(root, "train"), c.train, "train.");

  json aim = section(root, "aim");
  take(aim, "depth_n", c.aim.depth_n, "aim.");
  std::string s;
  if (aim.contains("layer_mode")) {
    take(aim, "layer_mode", s, "aim.");
    if (s == "last") c.aim.layer_mode = TraceLayers::LastOnly;
    else if (s == "all") c.aim.layer_mode = TraceLayers::AllUpToN;
    else throw Error("config: aim.layer_mode must be last or all");
  }
  if (aim.contains("objective")) {
    take(aim, "objective", s, "aim.");
    if (s == "aim") c.aim.objective = AimObjective::Full;
    else if (s == "aim-star") c.aim.objective = AimObjective::Star;
    else throw Error("config: aim.objective must be aim or aim-star");
  }
  if (aim.contains("kernel")) {
    take(aim, "kernel", s, "aim.");
    if (s == "mse") c.aim.kernel = AimKernel::Mse;
    else if (s == "cosine") c.aim.kernel = AimKernel::Cosine;
    else throw Error("config: aim.kernel must be mse or cosine");
  }
  if (aim.contains("heads")) {
    take(aim, "heads", s, "aim.");
    if (s == "concat") c.aim.heads = HeadReduction::Concat;
    else if (s == "per-head-mean") c.aim.heads = HeadReduction::PerHeadMean;
    else throw Error("config: aim.heads must be concat or per-head-mean");
  }
  reject_leftovers(aim, "aim.");

  json init = section(root, "init");
  if (init.contains("strategy")) {
    take(init, "strategy", s, "init.");
    c.init = parse_init_strategy(s);
  }
  take(init, "k", c.focus.k, "init.");
  take(init, "temperature", c.focus.temperature, "init.");
  take(init, "aux_dim", c.aux.dim, "init.");
  take(init, "window", c.aux.window, "init.");
  reject_leftovers(init, "init.");

  json paths = section(root, "paths");
  take(paths, "train_corpus", c.paths.train_corpus, "paths.");
  take(paths, "eval_corpus", c.paths.eval_corpus, "paths.");
  take(paths, "base_vocab", c.paths.base_vocab, "paths.");
  take(paths, "ext_vocab", c.paths.ext_vocab, "paths.");
  take(paths, "teacher", c.paths.teacher, "paths.");
  take(paths, "init", c.paths.init, "paths.");
  take(paths, "aux", c.paths.aux, "paths.");
  take(paths, "out", c.paths.out, "paths.");
  reject_leftovers(paths, "paths.");

  // Manifests carry bookkeeping next to the config; only a bare config is
  // checked strictly.
  root.erase("tool_version");
  root.erase("command");
  reject_leftovers(root, "");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig c;
  merge_json(c, buffer.str());
  return c;
}

}  // namespace mattforge::cli
