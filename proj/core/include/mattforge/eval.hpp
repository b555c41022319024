#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mattforge/corpus.hpp"
#include "mattforge/model.hpp"
#include "mattforge/tokenizer.hpp"

namespace mattforge {

struct EvalReport {
  double bpc = 0.0;
  double nats = 0.0;
  std::int64_t tokens = 0;  // scored targets
  std::int64_t chars = 0;
  std::string vocab_id;
  std::string checkpoint_id;

  std::string to_json() const;
};

/// Cross-entropy in bits over every token of every document, divided by the
/// character count. Each document is scored independently in chunks of
/// max_seq - 1 tokens, each chunk prefixed with BOS; BOS is never a target.
EvalReport bits_per_char(const ModelView<float>& model, const Vocab& vocab, const Corpus& corpus);

struct CompressionCell {
  std::string vocab;
  std::string corpus;
  double rate = 0.0;
  std::int64_t chars = 0;
  std::int64_t tokens = 0;
};

struct CompressionTable {
  std::vector<CompressionCell> cells;

  std::string to_csv() const;
  std::string to_text() const;
};

CompressionTable compression_report(const std::vector<std::pair<std::string, const Vocab*>>& vocabs,
                                    const std::vector<std::pair<std::string, const Corpus*>>& corpora);

struct PlotOptions {
  std::optional<double> init_bpc;
  std::optional<double> teacher_bpc;
  int width = 640;
  int height = 400;
};

/// Line chart of BPC over tokens seen (AIM loss when no BPC was logged).
std::string convergence_plot(std::string_view csv, const PlotOptions& options = {});

}  // namespace mattforge
