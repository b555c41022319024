#include "mattforge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mattforge/error.hpp"
#include "mattforge/rng.hpp"

namespace mattforge {

void TrainConfig::validate(bool allow_zero_steps) const {
  if (!(lr > 0.0)) throw Error("lr must be positive");
  if (batch_docs < 1) throw Error("batch_docs must be at least 1");
  if (steps < (allow_zero_steps ? 0 : 1)) throw Error("steps must be at least 1");
  if (max_teacher_tokens < 2) throw Error("max_teacher_tokens must be at least 2");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw Error("betas must be in [0, 1)");
  if (!(eps > 0.0)) throw Error("eps must be positive");
  if (weight_decay < 0.0) throw Error("weight_decay must be non-negative");
  if (log_every < 1) throw Error("log_every must be at least 1");
  if (checkpoint_every < 0 || eval_every < 0 || warmup_steps < 0) throw Error("schedules must be non-negative");
  if (threads < 1) throw Error("threads must be at least 1");
}

FreezeMask FreezeMask::from_overlap(const VocabOverlap& overlap, bool freeze_overlap) {
  FreezeMask mask;
  if (freeze_overlap) {
    mask.trainable_rows = overlap.new_ids;
  } else {
    mask.trainable_rows.resize(overlap.base_of.size());
    std::iota(mask.trainable_rows.begin(), mask.trainable_rows.end(), 0);
  }
  return mask;
}

OptimizerState OptimizerState::for_mask(const FreezeMask& mask, int hidden) {
  OptimizerState s;
  s.m = MatrixD::Zero(static_cast<Eigen::Index>(mask.trainable_rows.size()), hidden);
  s.v = MatrixD::Zero(static_cast<Eigen::Index>(mask.trainable_rows.size()), hidden);
  return s;
}

std::optional<MattItem> make_item(std::string_view text, const Vocab& base, const Vocab& ext,
                                  const VocabOverlap& overlap, int max_teacher_tokens, int max_student_tokens) {
  if (text.empty()) return std::nullopt;
  const auto t = encode(base, text);
  const auto s = encode(ext, text);
  const SegmentAlignment full = align_offsets(t.byte_offsets, s.byte_offsets);

  // Room left after BOS.
  const int t_room = max_teacher_tokens - 1;
  const int s_room = max_student_tokens - 1;
  int count = 0;
  while (count < full.m && full.ell_teacher[count] < t_room && full.ell_student[count] < s_room) ++count;
  if (count == 0) return std::nullopt;

  MattItem item;
  item.truncated = count < full.m;
  item.alignment = with_bos(truncate_segments(full, count));
  const auto t_len = static_cast<std::size_t>(full.ell_teacher[count - 1] + 1);
  const auto s_len = static_cast<std::size_t>(full.ell_student[count - 1] + 1);
  item.teacher_ids.push_back(base.bos());
  item.teacher_ids.insert(item.teacher_ids.end(), t.ids.begin(), t.ids.begin() + static_cast<std::ptrdiff_t>(t_len));
  item.student_ids.push_back(ext.bos());
  item.student_ids.insert(item.student_ids.end(), s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(s_len));
  for (TokenId id : item.student_ids) {
    if (!overlap.is_shared(id)) {
      item.has_new = true;
      break;
    }
  }
  return item;
}

std::vector<MattItem> build_batch(const Corpus& docs, const Vocab& base, const Vocab& ext, const VocabOverlap& overlap,
                                  int max_teacher_tokens, int max_student_tokens) {
  std::vector<MattItem> items;
  std::size_t skipped = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    auto item = make_item(docs[d], base, ext, overlap, max_teacher_tokens, max_student_tokens);
    if (!item) {
      ++skipped;
      spdlog::debug("document {} has no complete segment under the cap; skipped", d);
      continue;
    }
    item->doc = d;
    items.push_back(std::move(*item));
  }
  if (skipped > 0) spdlog::info("build_batch: skipped {} of {} documents", skipped, docs.size());
  return items;
}

namespace {

struct ItemOutput {
  double loss = 0.0;
  std::int64_t kernel_terms = 0;
  std::int64_t degenerate = 0;
  double position_delta = 0.0;
  int segments = 0;
  MatrixF grad;
};

ItemOutput item_loss_and_grad(const Parameters<float>& teacher, const MatrixF& student_emb, const MattItem& item,
                              const AimConfig& aim, bool want_grad) {
  const ModelView<float> teacher_view(teacher);
  const ModelView<float> student_view(teacher, student_emb);
  const auto& a = item.alignment;
  const auto t_trace = forward_trace(teacher_view, std::span<const TokenId>(item.teacher_ids), aim.depth_n, aim.layer_mode);
  const auto s_trace = forward_trace(student_view, std::span<const TokenId>(item.student_ids), aim.depth_n, aim.layer_mode);
  const int n_heads = teacher.config.n_heads;

  ItemOutput out;
  out.segments = a.m;
  for (int i = 0; i < a.m; ++i) out.position_delta += a.ell_student[i] - a.ell_teacher[i];

  TraceGrad<float> upstream;
  if (aim.objective == AimObjective::Full) {
    const auto t_states = segment_states(t_trace, a.teacher_seg, a.ell_teacher);
    const auto s_states = segment_states(s_trace, a.student_seg, a.ell_student);
    auto r = aim_loss(t_states, s_states, aim.kernel, aim.heads, n_heads);
    out.loss = r.loss;
    out.kernel_terms = r.kernel_terms;
    out.degenerate = r.degenerate;
    if (want_grad) upstream = segment_states_backward(s_trace, a.student_seg, a.ell_student, r.grad);
  } else {
    const auto t_out = segment_outputs(t_trace, a.ell_teacher);
    const auto s_out = segment_outputs(s_trace, a.ell_student);
    auto r = aim_star_loss(t_out, s_out, aim.kernel, aim.heads, n_heads);
    out.loss = r.loss;
    out.kernel_terms = r.kernel_terms;
    out.degenerate = r.degenerate;
    if (want_grad) upstream = segment_outputs_backward(s_trace, a.ell_student, r.grad);
  }
  if (want_grad) out.grad = embedding_grad(student_view, s_trace, upstream);
  return out;
}

}  // namespace

StepStats matt_loss_and_grad(const Parameters<float>& teacher, const MatrixF& student_emb,
                             std::span<const MattItem* const> batch, const AimConfig& aim, MatrixF* grad, int threads) {
  aim.validate(teacher.config.n_layers);
  if (student_emb.cols() != teacher.config.hidden()) throw Error("student embedding width does not match the teacher");
  if (batch.empty()) throw Error("empty batch");

  std::vector<ItemOutput> outputs(batch.size());
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t b = first; b < batch.size(); b += stride) {
      outputs[b] = item_loss_and_grad(teacher, student_emb, *batch[b], aim, grad != nullptr);
    }
  };
  const auto workers = std::min(batch.size(), static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }

  // Fixed item order keeps the reduction deterministic across thread counts.
  StepStats stats;
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grad) grad->setZero(student_emb.rows(), student_emb.cols());
  double delta = 0.0;
  std::int64_t segments = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    stats.loss += outputs[b].loss * inv;
    stats.kernel_terms += outputs[b].kernel_terms;
    stats.degenerate += outputs[b].degenerate;
    stats.student_tokens += static_cast<std::int64_t>(batch[b]->student_ids.size());
    delta += outputs[b].position_delta;
    segments += outputs[b].segments;
    if (grad) *grad += outputs[b].grad * static_cast<float>(inv);
  }
  stats.mean_position_delta = segments > 0 ? delta / static_cast<double>(segments) : 0.0;
  return stats;
}

StepStats matt_step(const Parameters<float>& teacher, MatrixF& student_emb, std::span<const MattItem* const> batch,
                    const AimConfig& aim, const FreezeMask& mask, OptimizerState& opt, const TrainConfig& cfg,
                    std::int64_t batch_id) {
  if (opt.m.rows() != static_cast<Eigen::Index>(mask.trainable_rows.size())) {
    throw Error("optimizer state does not match the freeze mask");
  }
  MatrixF grad;
  const StepStats stats = matt_loss_and_grad(teacher, student_emb, batch, aim, &grad, cfg.threads);
  if (!std::isfinite(stats.loss) || !grad.allFinite()) {
    throw Error(fmt::format("non-finite loss or gradient in batch {}", batch_id));
  }

  ++opt.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t k = 0; k < mask.trainable_rows.size(); ++k) {
    const TokenId row = mask.trainable_rows[k];
    const auto r = static_cast<Eigen::Index>(k);
    for (Eigen::Index c = 0; c < student_emb.cols(); ++c) {
      const double g = grad(row, c);
      double& m = opt.m(r, c);
      double& v = opt.v(r, c);
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double w = student_emb(row, c);
      const double update = (m / c1) / (std::sqrt(v / c2) + cfg.eps) + cfg.weight_decay * w;
      student_emb(row, c) = static_cast<float>(w - cfg.lr * update);
    }
  }
  return stats;
}

std::string convergence_csv(const std::vector<ConvergenceRow>& rows, bool include_wall) {
  std::string out = include_wall ? "step,tokens_seen,aim_loss,wall_ms,bpc\n" : "step,tokens_seen,aim_loss,bpc\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.9g}", r.step, r.tokens_seen, r.aim_loss);
    if (include_wall) out += fmt::format(",{:.1f}", r.wall_ms);
    out += r.bpc ? fmt::format(",{:.9g}\n", *r.bpc) : std::string(",\n");
  }
  return out;
}

TransferResult matt_transfer(const Parameters<float>& teacher, const Vocab& base, const Vocab& ext, const Corpus& corpus,
                             const AimConfig& aim, const TrainConfig& cfg, MatrixF init_embedding,
                             const TransferHooks& hooks) {
  cfg.validate(true);
  aim.validate(teacher.config.n_layers);
  if (teacher.embedding.rows() != static_cast<Eigen::Index>(base.size())) {
    throw Error("teacher embedding does not match the base vocabulary");
  }
  if (init_embedding.rows() != static_cast<Eigen::Index>(ext.size()) ||
      init_embedding.cols() != teacher.config.hidden()) {
    throw Error("initial embedding does not match the extended vocabulary");
  }
  const auto start = std::chrono::steady_clock::now();
  const VocabOverlap overlap = compute_overlap(base, ext);

  TransferResult result;
  result.mask = FreezeMask::from_overlap(overlap, cfg.freeze_overlap);
  result.optimizer = OptimizerState::for_mask(result.mask, teacher.config.hidden());
  result.embedding = std::move(init_embedding);

  std::vector<MattItem> items =
      build_batch(corpus, base, ext, overlap, std::min(cfg.max_teacher_tokens, teacher.config.max_seq),
                  teacher.config.max_seq);
  result.skipped_docs = corpus.size() - items.size();
  if (cfg.skip_no_new) {
    const auto before = items.size();
    std::erase_if(items, [](const MattItem& it) { return !it.has_new; });
    spdlog::info("skip-no-new: kept {} of {} documents", items.size(), before);
  }
  if (items.empty()) throw Error("no usable documents for transfer");
  result.items = items.size();

  std::vector<const MattItem*> monitor;
  for (std::size_t i = 0; i < std::min(items.size(), static_cast<std::size_t>(cfg.batch_docs)); ++i) {
    monitor.push_back(&items[i]);
  }

  std::int64_t tokens_seen = 0;
  auto log_row = [&](int step) {
    ConvergenceRow row;
    row.step = step;
    row.tokens_seen = tokens_seen;
    row.aim_loss = matt_loss_and_grad(teacher, result.embedding, monitor, aim, nullptr, cfg.threads).loss;
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && hooks.eval_bpc) row.bpc = hooks.eval_bpc(result.embedding);
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (hooks.on_log) hooks.on_log(row);
  };
  log_row(0);

  Rng rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t cursor = 0;

  // Per-window diagnostics: AIM kernel evaluations, degenerate cosine terms,
  // and how far student segment ends sit from the teacher's.
  std::int64_t window_terms = 0, window_degenerate = 0;
  double window_delta = 0.0;
  int window_steps = 0;
  std::vector<const MattItem*> batch;
  for (int step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    for (int b = 0; b < cfg.batch_docs; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      batch.push_back(&items[order[cursor++]]);
    }
    const StepStats stats =
        matt_step(teacher, result.embedding, batch, aim, result.mask, result.optimizer, cfg, step);
    tokens_seen += stats.student_tokens;
    window_terms += stats.kernel_terms;
    window_degenerate += stats.degenerate;
    window_delta += stats.mean_position_delta;
    ++window_steps;
    if (step % cfg.log_every == 0) {
      spdlog::debug("matt step {} kernel_terms {} degenerate {} mean_position_delta {:.3f}", step, window_terms,
                    window_degenerate, window_delta / window_steps);
      window_terms = window_degenerate = 0;
      window_delta = 0.0;
      window_steps = 0;
      log_row(step);
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && hooks.checkpoint) {
      hooks.checkpoint(step, result.embedding, result.optimizer);
    }
  }
  return result;
}

Parameters<float> pretrain_teacher(const ModelConfig& config, const TrainConfig& cfg, const Vocab& vocab,
                                   const Corpus& corpus, const PretrainHooks& hooks) {
  config.validate();
  cfg.validate(true);
  if (static_cast<std::size_t>(config.vocab_size) != vocab.size()) throw Error("model vocab_size does not match the vocabulary");

  std::vector<std::vector<TokenId>> docs;
  for (const auto& text : corpus) {
    auto ids = encode(vocab, text).ids;
    if (!ids.empty()) docs.push_back(std::move(ids));
  }
  if (docs.empty()) throw Error("empty corpus");

  Parameters<float> params = init_params(config, derive_seed(cfg.seed, 1));
  Parameters<float> m = zeros_like(params);
  Parameters<float> v = zeros_like(params);
  auto p_refs = tensor_refs(params);
  auto m_refs = tensor_refs(m);
  auto v_refs = tensor_refs(v);

  Rng rng(derive_seed(cfg.seed, 3));
  const auto window = static_cast<std::size_t>(std::min(cfg.max_teacher_tokens, config.max_seq) - 1);
  std::vector<TokenId> seq;
  for (int step = 1; step <= cfg.steps; ++step) {
    Parameters<float> grads = zeros_like(params);
    double loss = 0.0;
    std::size_t targets = 0;
    for (int b = 0; b < cfg.batch_docs; ++b) {
      const auto& doc = docs[static_cast<std::size_t>(rng.below(docs.size()))];
      const std::size_t offset = doc.size() > window ? static_cast<std::size_t>(rng.below(doc.size() - window + 1)) : 0;
      const std::size_t len = std::min(window, doc.size() - offset);
      seq.assign(1, vocab.bos());
      seq.insert(seq.end(), doc.begin() + static_cast<std::ptrdiff_t>(offset),
                 doc.begin() + static_cast<std::ptrdiff_t>(offset + len));
      loss += lm_loss(params, std::span<const TokenId>(seq), &grads, 1.0);
      targets += len;
    }
    loss /= static_cast<double>(targets);
    if (!std::isfinite(loss)) throw Error(fmt::format("pretraining diverged at step {} (loss {})", step, loss));

    const double scale = 1.0 / static_cast<double>(targets);
    const double lr = cfg.warmup_steps > 0 ? cfg.lr * std::min(1.0, static_cast<double>(step) / cfg.warmup_steps) : cfg.lr;
    const double c1 = 1.0 - std::pow(cfg.beta1, step);
    const double c2 = 1.0 - std::pow(cfg.beta2, step);
    auto g_refs = tensor_refs(grads);
    for (std::size_t t = 0; t < p_refs.size(); ++t) {
      for (Eigen::Index i = 0; i < p_refs[t].size(); ++i) {
        const double g = g_refs[t].data[i] * scale;
        const double mi = cfg.beta1 * m_refs[t].data[i] + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * v_refs[t].data[i] + (1.0 - cfg.beta2) * g * g;
        m_refs[t].data[i] = static_cast<float>(mi);
        v_refs[t].data[i] = static_cast<float>(vi);
        const double w = p_refs[t].data[i];
        p_refs[t].data[i] = static_cast<float>(w - lr * ((mi / c1) / (std::sqrt(vi / c2) + cfg.eps) + cfg.weight_decay * w));
      }
    }
    if (hooks.on_log && (step % cfg.log_every == 0 || step == 1)) hooks.on_log(step, loss);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && hooks.checkpoint) hooks.checkpoint(step, params);
  }
  if (!params.all_finite()) throw Error("pretraining produced non-finite weights");
  return params;
}

}  // namespace mattforge
