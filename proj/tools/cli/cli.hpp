#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "mattforge/aim.hpp"
#include "mattforge/init.hpp"
#include "mattforge/model.hpp"
#include "mattforge/train.hpp"

namespace mattforge::cli {

struct Paths {
  std::string train_corpus;
  std::string eval_corpus;
  std::string base_vocab;
  std::string ext_vocab;
  std::string teacher;  // checkpoint directory
  std::string init;     // student checkpoint directory to start from
  std::string aux;      // optional `id dim v...` aux embeddings
  std::string out;
};

/// Everything a run depends on. Serialized verbatim into every output
/// manifest; feeding a manifest back through --config reproduces the run.
struct RunConfig {
  std::uint64_t seed = 0;
  int base_vocab_size = 512;
  int addon_vocab_size = 768;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig train;
  AimConfig aim;
  InitStrategy init = InitStrategy::FocusLite;
  FocusOptions focus;
  AuxOptions aux;
  Paths paths;

  RunConfig();
};

std::string to_json(const RunConfig& config);

/// Overlays keys found in `json_text` onto `config`. Accepts either a bare
/// config object or a manifest holding one under "config". Unknown keys are
/// errors.
void merge_json(RunConfig& config, std::string_view json_text);

RunConfig load_run_config(const std::filesystem::path& path);

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 success, 1 validation or runtime failure, 2 usage error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mattforge::cli
