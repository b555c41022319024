#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mattforge/corpus.hpp"
#include "mattforge/tensor.hpp"
#include "mattforge/tokenizer.hpp"

namespace mattforge {

/// Auxiliary token vectors over a vocabulary, used only to measure token
/// similarity. Rows are unit length where covered and zero elsewhere.
struct AuxEmbeddings {
  MatrixD matrix;  // vocab x dim
  int dim = 0;
  std::vector<bool> coverage;

  bool covers(TokenId id) const { return coverage.at(static_cast<std::size_t>(id)); }
};

struct AuxOptions {
  int dim = 64;
  int window = 5;  // symmetric, within one document
};

/// PPMI over windowed token co-occurrence, factorized by a truncated
/// eigendecomposition of the (symmetric) PPMI matrix.
AuxEmbeddings aux_embeddings(const Corpus& corpus, const Vocab& vocab, const AuxOptions& options = {});

/// Reads `id dim v1 ... v_dim` lines. Rows are unit-normalized on load.
AuxEmbeddings load_aux_embeddings(const std::filesystem::path& path, std::size_t vocab_size);

struct FocusOptions {
  int k = 10;
  double temperature = 0.1;
};

struct NeighborWeight {
  TokenId base_id;
  double weight;
};

/// Convex weights over base rows for one new token. Candidates are covered
/// overlap tokens with positive similarity; empty means "fall back to mean".
std::vector<NeighborWeight> focus_lite_weights(TokenId new_id, const VocabOverlap& overlap, const AuxEmbeddings& aux,
                                               const FocusOptions& options = {});

MatrixF focus_lite_init(const MatrixF& base_emb, const VocabOverlap& overlap, const AuxEmbeddings& aux,
                        const FocusOptions& options = {});

MatrixF mean_init(const MatrixF& base_emb, const VocabOverlap& overlap);

/// New rows drawn from normal(0, 0.02).
MatrixF copy_overlap_init(const MatrixF& base_emb, const VocabOverlap& overlap, std::uint64_t seed);

enum class InitStrategy { FocusLite, Mean, Random };

InitStrategy parse_init_strategy(std::string_view name);
std::string_view to_string(InitStrategy strategy);

}  // namespace mattforge
