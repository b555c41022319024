#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mattforge/aim.hpp"
#include "mattforge/corpus.hpp"
#include "mattforge/model.hpp"
#include "mattforge/segmentation.hpp"
#include "mattforge/tokenizer.hpp"

namespace mattforge {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int batch_docs = 4;
  int max_teacher_tokens = 256;
  int steps = 1;
  std::uint64_t seed = 0;
  bool freeze_overlap = true;
  int checkpoint_every = 0;  // 0 disables
  int log_every = 100;
  int eval_every = 0;     // 0 disables scheduled BPC
  int warmup_steps = 0;   // linear warmup; used for teacher pretraining
  bool skip_no_new = false;
  int threads = 1;

  void validate(bool allow_zero_steps = false) const;
};

/// Embedding rows that receive updates.
struct FreezeMask {
  std::vector<TokenId> trainable_rows;  // ascending

  static FreezeMask from_overlap(const VocabOverlap& overlap, bool freeze_overlap);
};

/// AdamW moments for the trainable rows only, in mask order.
struct OptimizerState {
  std::int64_t step = 0;
  MatrixD m;
  MatrixD v;

  static OptimizerState for_mask(const FreezeMask& mask, int hidden);
};

/// One document prepared for transfer: both token streams start with BOS and
/// cover the same text prefix.
struct MattItem {
  std::size_t doc = 0;
  std::vector<TokenId> teacher_ids;
  std::vector<TokenId> student_ids;
  SegmentAlignment alignment;
  bool has_new = false;
  bool truncated = false;
};

/// Tokenizes with both vocabularies, aligns on byte offsets, and cuts at the
/// largest segment boundary with at most `max_teacher_tokens` teacher tokens
/// (BOS included) and at most `max_student_tokens` student tokens. Returns
/// nullopt when no complete segment fits.
std::optional<MattItem> make_item(std::string_view text, const Vocab& base, const Vocab& ext,
                                  const VocabOverlap& overlap, int max_teacher_tokens, int max_student_tokens);

std::vector<MattItem> build_batch(const Corpus& docs, const Vocab& base, const Vocab& ext, const VocabOverlap& overlap,
                                  int max_teacher_tokens, int max_student_tokens);

struct StepStats {
  double loss = 0.0;
  std::int64_t kernel_terms = 0;
  std::int64_t degenerate = 0;
  double mean_position_delta = 0.0;  // mean ell_student - ell_teacher
  std::int64_t student_tokens = 0;
};

/// Loss and embedding gradient (dense, vocab x hidden, mean over items) for a
/// batch, without updating anything.
StepStats matt_loss_and_grad(const Parameters<float>& teacher, const MatrixF& student_emb,
                             std::span<const MattItem* const> batch, const AimConfig& aim, MatrixF* grad,
                             int threads = 1);

/// One MATT update: AIM loss, gradient through the first depth_n layers,
/// masked AdamW on the student embedding.
StepStats matt_step(const Parameters<float>& teacher, MatrixF& student_emb, std::span<const MattItem* const> batch,
                    const AimConfig& aim, const FreezeMask& mask, OptimizerState& opt, const TrainConfig& cfg,
                    std::int64_t batch_id = 0);

struct ConvergenceRow {
  int step = 0;
  std::int64_t tokens_seen = 0;
  double aim_loss = 0.0;
  double wall_ms = 0.0;
  std::optional<double> bpc;
};

std::string convergence_csv(const std::vector<ConvergenceRow>& rows, bool include_wall = true);

struct TransferHooks {
  std::function<double(const MatrixF& embedding)> eval_bpc;  // used when eval_every > 0
  std::function<void(int step, const MatrixF& embedding, const OptimizerState& opt)> checkpoint;
  std::function<void(const ConvergenceRow& row)> on_log;
};

struct TransferResult {
  MatrixF embedding;
  OptimizerState optimizer;
  FreezeMask mask;
  std::vector<ConvergenceRow> log;
  std::size_t items = 0;
  std::size_t skipped_docs = 0;
};

TransferResult matt_transfer(const Parameters<float>& teacher, const Vocab& base, const Vocab& ext, const Corpus& corpus,
                             const AimConfig& aim, const TrainConfig& cfg, MatrixF init_embedding,
                             const TransferHooks& hooks = {});

struct PretrainHooks {
  std::function<void(int step, double loss)> on_log;
  std::function<void(int step, const Parameters<float>& params)> checkpoint;
};

/// Next-token training of every parameter with AdamW. Aborts on a non-finite
/// loss.
Parameters<float> pretrain_teacher(const ModelConfig& config, const TrainConfig& cfg, const Vocab& vocab,
                                   const Corpus& corpus, const PretrainHooks& hooks = {});

}  // namespace mattforge
