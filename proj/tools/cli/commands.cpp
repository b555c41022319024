#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "mattforge/checkpoint.hpp"
#include "mattforge/corpus.hpp"
#include "mattforge/error.hpp"
#include "mattforge/eval.hpp"
#include "mattforge/rng.hpp"
#include "mattforge/segmentation.hpp"
#include "mattforge/tokenizer.hpp"

namespace mattforge::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> depth_n;
  std::string objective;
  std::string kernel;
  std::string layer_mode;
  std::string freeze_overlap;
  std::string init;
  bool skip_no_new = false;
  std::string out;

  // Subcommand inputs; each subcommand registers the ones it reads.
  std::string corpus;
  std::string eval_corpus;
  std::string vocab;
  std::string base;
  std::string ext;
  std::string teacher;
  std::string student;
  std::string checkpoint;
  std::string init_checkpoint;
  std::string text;
  std::string svg;
  std::string csv;
  std::optional<int> size;
  std::optional<int> steps;
  std::optional<double> init_bpc;
  std::optional<double> teacher_bpc;
  std::vector<std::string> vocab_specs;
  std::vector<std::string> corpus_specs;
};

void add_common(CLI::App& sub, Flags& f) {
  sub.add_option("--config", f.config, "JSON run config (or a previous manifest)");
  sub.add_option("--seed", f.seed, "Seed for every random stream");
  sub.add_option("--depth-n", f.depth_n, "Layers traced by the AIM objective");
  sub.add_option("--objective", f.objective, "aim | aim-star")->check(CLI::IsMember({"aim", "aim-star"}));
  sub.add_option("--kernel", f.kernel, "mse | cosine")->check(CLI::IsMember({"mse", "cosine"}));
  sub.add_option("--layer-mode", f.layer_mode, "last | all")->check(CLI::IsMember({"last", "all"}));
  sub.add_option("--freeze-overlap", f.freeze_overlap, "true | false")->check(CLI::IsMember({"true", "false"}));
  sub.add_option("--init", f.init, "focus-lite | mean | random")->check(CLI::IsMember({"focus-lite", "mean", "random"}));
  sub.add_flag("--skip-no-new", f.skip_no_new, "Train only on documents containing new tokens");
  sub.add_option("--out", f.out, "Output directory");
}

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.depth_n) c.aim.depth_n = *f.depth_n;
  if (!f.objective.empty()) c.aim.objective = f.objective == "aim" ? AimObjective::Full : AimObjective::Star;
  if (!f.kernel.empty()) c.aim.kernel = f.kernel == "mse" ? AimKernel::Mse : AimKernel::Cosine;
  if (!f.layer_mode.empty()) c.aim.layer_mode = f.layer_mode == "last" ? TraceLayers::LastOnly : TraceLayers::AllUpToN;
  if (!f.freeze_overlap.empty()) c.train.freeze_overlap = f.freeze_overlap == "true";
  if (!f.init.empty()) c.init = parse_init_strategy(f.init);
  if (f.skip_no_new) c.train.skip_no_new = true;
  if (!f.out.empty()) c.paths.out = f.out;
  if (!f.corpus.empty()) c.paths.train_corpus = f.corpus;
  if (!f.eval_corpus.empty()) c.paths.eval_corpus = f.eval_corpus;
  if (!f.base.empty()) c.paths.base_vocab = f.base;
  if (!f.ext.empty()) c.paths.ext_vocab = f.ext;
  if (!f.teacher.empty()) c.paths.teacher = f.teacher;
  if (!f.init_checkpoint.empty()) c.paths.init = f.init_checkpoint;
  c.pretrain.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

void require_path(const std::string& path, const char* what) {
  if (path.empty()) throw Error(fmt::format("missing {}", what));
  if (!fs::exists(path)) throw Error(fmt::format("{} not found: {}", what, path));
}

fs::path require_out(const RunConfig& c) {
  if (c.paths.out.empty()) throw Error("missing --out");
  fs::create_directories(c.paths.out);
  return c.paths.out;
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& c, ordered_json results = {}) {
  ordered_json m;
  m["tool_version"] = kToolVersion;
  m["command"] = command;
  m["seed"] = c.seed;
  m["config"] = ordered_json::parse(to_json(c));
  if (!results.is_null()) m["results"] = std::move(results);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Parameters<float> with_embedding(const Parameters<float>& teacher, const MatrixF& embedding) {
  Parameters<float> p = teacher;
  p.embedding = embedding;
  p.config.vocab_size = static_cast<int>(embedding.rows());
  return p;
}

MatrixF initial_embedding(const RunConfig& c, const Parameters<float>& teacher, const Vocab& base, const Vocab& ext,
                          const Corpus& corpus) {
  const VocabOverlap overlap = compute_overlap(base, ext);
  switch (c.init) {
    case InitStrategy::Mean: return mean_init(teacher.embedding, overlap);
    case InitStrategy::Random: return copy_overlap_init(teacher.embedding, overlap, derive_seed(c.seed, 4));
    case InitStrategy::FocusLite: {
      const AuxEmbeddings aux =
          c.paths.aux.empty() ? aux_embeddings(corpus, ext, c.aux) : load_aux_embeddings(c.paths.aux, ext.size());
      return focus_lite_init(teacher.embedding, overlap, aux, c.focus);
    }
  }
  throw Error("unknown init strategy");
}

int cmd_train_tokenizer(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  if (f.size) c.base_vocab_size = *f.size;
  require_path(c.paths.train_corpus, "training corpus");
  const fs::path dir = require_out(c);
  const Corpus corpus = load_corpus(c.paths.train_corpus);
  const Vocab vocab = train_bpe(corpus, static_cast<std::size_t>(c.base_vocab_size));
  save_vocab(dir / "vocab.json", vocab);
  const double rate = compression_rate(vocab, corpus);
  write_manifest(dir, "train-tokenizer", c, {{"vocab_size", vocab.size()}, {"compression", rate}});
  out << fmt::format("vocab {} tokens, {:.4f} chars/token -> {}\n", vocab.size(), rate, (dir / "vocab.json").string());
  return 0;
}

int cmd_extend_vocab(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  if (f.size) c.addon_vocab_size = *f.size;
  require_path(c.paths.base_vocab, "base vocabulary");
  require_path(c.paths.train_corpus, "training corpus");
  const fs::path dir = require_out(c);
  const Corpus corpus = load_corpus(c.paths.train_corpus);
  const Vocab base = load_vocab(c.paths.base_vocab);
  const Vocab addon = train_bpe(corpus, static_cast<std::size_t>(c.addon_vocab_size));
  const VocabExtension ext = extend_vocab(base, addon);
  save_vocab(dir / "vocab.json", ext.vocab);
  const double base_rate = compression_rate(base, corpus);
  const double ext_rate = compression_rate(ext.vocab, corpus);
  write_manifest(dir, "extend-vocab", c,
                 {{"base_size", base.size()},
                  {"extended_size", ext.vocab.size()},
                  {"new_tokens", ext.overlap.new_ids.size()},
                  {"base_compression", base_rate},
                  {"extended_compression", ext_rate}});
  out << fmt::format("extended {} -> {} tokens ({} new); compression {:.4f} -> {:.4f} ({:.3f}x)\n", base.size(),
                     ext.vocab.size(), ext.overlap.new_ids.size(), base_rate, ext_rate, ext_rate / base_rate);
  return 0;
}

std::pair<std::string, std::string> split_spec(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) return {fs::path(spec).stem().string(), spec};
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

int cmd_compression_report(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  std::vector<std::pair<std::string, std::string>> vocab_specs, corpus_specs;
  for (const auto& s : f.vocab_specs) vocab_specs.push_back(split_spec(s));
  for (const auto& s : f.corpus_specs) corpus_specs.push_back(split_spec(s));
  if (f.vocab_specs.empty() && !f.config.empty()) {
    if (!c.paths.base_vocab.empty()) vocab_specs.emplace_back("base", c.paths.base_vocab);
    if (!c.paths.ext_vocab.empty()) vocab_specs.emplace_back("extended", c.paths.ext_vocab);
  }
  if (f.corpus_specs.empty() && !f.config.empty()) {
    if (!c.paths.train_corpus.empty()) corpus_specs.emplace_back("train", c.paths.train_corpus);
    if (!c.paths.eval_corpus.empty()) corpus_specs.emplace_back("eval", c.paths.eval_corpus);
  }
  std::vector<Vocab> vocabs;
  std::vector<Corpus> corpora;
  for (const auto& [name, path] : vocab_specs) {
    require_path(path, "vocabulary");
    vocabs.push_back(load_vocab(path));
  }
  for (const auto& [name, path] : corpus_specs) {
    require_path(path, "corpus");
    corpora.push_back(load_corpus(path));
  }
  std::vector<std::pair<std::string, const Vocab*>> v;
  std::vector<std::pair<std::string, const Corpus*>> k;
  for (std::size_t i = 0; i < vocabs.size(); ++i) v.emplace_back(vocab_specs[i].first, &vocabs[i]);
  for (std::size_t i = 0; i < corpora.size(); ++i) k.emplace_back(corpus_specs[i].first, &corpora[i]);
  const CompressionTable table = compression_report(v, k);
  out << table.to_text();
  if (!c.paths.out.empty()) {
    const fs::path dir = require_out(c);
    write_text(dir / "compression.csv", table.to_csv());
    write_text(dir / "compression.txt", table.to_text());
    write_manifest(dir, "compression-report", c);
  }
  return 0;
}

int cmd_pretrain_teacher(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  if (f.steps) c.pretrain.steps = *f.steps;
  if (!f.vocab.empty()) c.paths.base_vocab = f.vocab;
  require_path(c.paths.base_vocab, "base vocabulary");
  require_path(c.paths.train_corpus, "training corpus");
  const Vocab vocab = load_vocab(c.paths.base_vocab);
  c.model.vocab_size = static_cast<int>(vocab.size());
  c.model.validate();
  c.pretrain.validate(true);
  const fs::path dir = require_out(c);
  const Corpus corpus = load_corpus(c.paths.train_corpus);

  std::string log = "step,loss\n";
  PretrainHooks hooks;
  hooks.on_log = [&](int step, double loss) {
    spdlog::info("pretrain step {} loss {:.4f}", step, loss);
    log += fmt::format("{},{:.6f}\n", step, loss);
  };
  hooks.checkpoint = [&](int step, const Parameters<float>& params) {
    save_checkpoint(dir / fmt::format("checkpoint-{}", step), params, {c.seed, step, "teacher", "{}"});
  };
  const Parameters<float> teacher = pretrain_teacher(c.model, c.pretrain, vocab, corpus, hooks);
  save_checkpoint(dir / "teacher", teacher, {c.seed, c.pretrain.steps, "teacher", "{}"});
  write_text(dir / "pretrain_log.csv", log);
  ordered_json results = {{"fingerprint", parameter_fingerprint(teacher)}};
  if (!c.paths.eval_corpus.empty()) {
    const auto report = bits_per_char(ModelView<float>(teacher), vocab, load_corpus(c.paths.eval_corpus));
    results["eval_bpc"] = report.bpc;
    out << fmt::format("teacher eval bpc {:.4f}\n", report.bpc);
  }
  write_manifest(dir, "pretrain-teacher", c, results);
  out << "teacher -> " << (dir / "teacher").string() << "\n";
  return 0;
}

struct TransferInputs {
  Vocab base;
  Vocab ext;
  LoadedCheckpoint teacher;
  Corpus corpus;
};

TransferInputs load_transfer_inputs(const RunConfig& c) {
  require_path(c.paths.teacher, "teacher checkpoint");
  require_path(c.paths.base_vocab, "base vocabulary");
  require_path(c.paths.ext_vocab, "extended vocabulary");
  require_path(c.paths.train_corpus, "training corpus");
  TransferInputs in{load_vocab(c.paths.base_vocab), load_vocab(c.paths.ext_vocab), load_checkpoint(c.paths.teacher),
                    load_corpus(c.paths.train_corpus)};
  if (in.teacher.params.embedding.rows() != static_cast<Eigen::Index>(in.base.size())) {
    throw Error("teacher checkpoint does not match the base vocabulary");
  }
  return in;
}

int cmd_init_embeddings(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  const TransferInputs in = load_transfer_inputs(c);
  const fs::path dir = require_out(c);
  const MatrixF emb = initial_embedding(c, in.teacher.params, in.base, in.ext, in.corpus);
  const ordered_json extra = {{"init", std::string(to_string(c.init))}};
  save_checkpoint(dir / "student", with_embedding(in.teacher.params, emb), {c.seed, 0, "student", extra.dump()});
  write_manifest(dir, "init-embeddings", c, {{"vocab_size", emb.rows()}});
  out << "student init -> " << (dir / "student").string() << "\n";
  return 0;
}

int cmd_matt_train(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  if (f.steps) c.train.steps = *f.steps;
  c.train.validate(true);
  const TransferInputs in = load_transfer_inputs(c);
  c.aim.validate(in.teacher.params.config.n_layers);
  const fs::path dir = require_out(c);
  const Parameters<float>& teacher = in.teacher.params;

  MatrixF init;
  if (!c.paths.init.empty()) {
    require_path(c.paths.init, "initial student checkpoint");
    init = load_checkpoint(c.paths.init).params.embedding;
  } else {
    init = initial_embedding(c, teacher, in.base, in.ext, in.corpus);
  }

  std::optional<Corpus> eval_corpus;
  if (!c.paths.eval_corpus.empty()) {
    require_path(c.paths.eval_corpus, "eval corpus");
    eval_corpus = load_corpus(c.paths.eval_corpus);
  }
  TransferHooks hooks;
  if (eval_corpus) {
    hooks.eval_bpc = [&](const MatrixF& emb) {
      return bits_per_char(ModelView<float>(teacher, emb), in.ext, *eval_corpus).bpc;
    };
  }
  hooks.on_log = [](const ConvergenceRow& r) {
    spdlog::info("matt step {} tokens {} aim_loss {:.6g}{}", r.step, r.tokens_seen, r.aim_loss,
                 r.bpc ? fmt::format(" bpc {:.4f}", *r.bpc) : "");
  };
  const auto mask_json = [&](const FreezeMask& mask, const OptimizerState& opt) {
    return ordered_json{{"trainable_rows", mask.trainable_rows}, {"optimizer_step", opt.step}}.dump();
  };
  const VocabOverlap overlap = compute_overlap(in.base, in.ext);
  const FreezeMask mask = FreezeMask::from_overlap(overlap, c.train.freeze_overlap);
  hooks.checkpoint = [&](int step, const MatrixF& emb, const OptimizerState& opt) {
    save_checkpoint(dir / fmt::format("checkpoint-{}", step), with_embedding(teacher, emb),
                    {c.seed, step, "student", mask_json(mask, opt)},
                    {{"optimizer.m", opt.m.cast<float>()}, {"optimizer.v", opt.v.cast<float>()}});
  };

  const TransferResult result = matt_transfer(teacher, in.base, in.ext, in.corpus, c.aim, c.train, init, hooks);
  save_checkpoint(dir / "student", with_embedding(teacher, result.embedding),
                  {c.seed, c.train.steps, "student", mask_json(result.mask, result.optimizer)},
                  {{"optimizer.m", result.optimizer.m.cast<float>()}, {"optimizer.v", result.optimizer.v.cast<float>()}});
  write_text(dir / "convergence.csv", convergence_csv(result.log));

  ordered_json results = {{"items", result.items}, {"skipped_docs", result.skipped_docs}};
  if (eval_corpus) {
    const double teacher_bpc = bits_per_char(ModelView<float>(teacher), in.base, *eval_corpus).bpc;
    results["teacher_bpc"] = teacher_bpc;
    if (!result.log.empty() && result.log.front().bpc) results["init_bpc"] = *result.log.front().bpc;
    if (!result.log.empty() && result.log.back().bpc) results["final_bpc"] = *result.log.back().bpc;
  }
  write_manifest(dir, "matt-train", c, results);
  out << "student -> " << (dir / "student").string() << "\n";
  return 0;
}

int cmd_eval_bpc(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  require_path(f.checkpoint, "checkpoint");
  if (!f.corpus.empty()) c.paths.eval_corpus = f.corpus;
  require_path(c.paths.eval_corpus, "eval corpus");
  require_path(f.vocab, "vocabulary");
  const LoadedCheckpoint ckpt = load_checkpoint(f.checkpoint);
  const Vocab vocab = load_vocab(f.vocab);
  EvalReport report = bits_per_char(ModelView<float>(ckpt.params), vocab, load_corpus(c.paths.eval_corpus));
  report.vocab_id = fs::path(f.vocab).string();
  report.checkpoint_id = fs::path(f.checkpoint).string();
  out << report.to_json() << "\n";
  if (!c.paths.out.empty()) {
    const fs::path dir = require_out(c);
    write_text(dir / "eval.json", report.to_json() + "\n");
    write_manifest(dir, "eval-bpc", c, ordered_json::parse(report.to_json()));
  }
  return 0;
}

int cmd_align_dump(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  require_path(f.teacher, "teacher vocabulary");
  require_path(f.student, "student vocabulary");
  const Vocab teacher = load_vocab(f.teacher);
  const Vocab student = load_vocab(f.student);
  const auto t = encode(teacher, f.text);
  const auto s = encode(student, f.text);
  const SegmentAlignment a = align_offsets(t.byte_offsets, s.byte_offsets);

  auto labels = [](const Vocab& v, const std::vector<TokenId>& ids) {
    std::vector<std::string> out;
    for (TokenId id : ids) out.push_back(v.token(id));
    return out;
  };
  const auto t_labels = labels(teacher, t.ids);
  const auto s_labels = labels(student, s.ids);
  ordered_json j = ordered_json::parse(alignment_to_json(a));
  j["teacher_tokens"] = t_labels;
  j["student_tokens"] = s_labels;
  ordered_json segments = ordered_json::array();
  for (int i = 0; i < a.m; ++i) {
    ordered_json seg = {{"teacher", ordered_json::array()}, {"student", ordered_json::array()}};
    for (std::size_t k = 0; k < a.teacher_seg.size(); ++k) {
      if (a.teacher_seg[k] == i) seg["teacher"].push_back(t_labels[k]);
    }
    for (std::size_t k = 0; k < a.student_seg.size(); ++k) {
      if (a.student_seg[k] == i) seg["student"].push_back(s_labels[k]);
    }
    segments.push_back(seg);
  }
  j["segments"] = segments;
  const std::string text = j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace);
  out << text << "\n";
  if (!f.svg.empty()) write_text(f.svg, alignment_svg(a, {t_labels, s_labels}));
  if (!c.paths.out.empty()) {
    const fs::path dir = require_out(c);
    write_text(dir / "alignment.json", text + "\n");
    write_manifest(dir, "align-dump", c);
  }
  return 0;
}

int cmd_convergence_plot(const Flags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  require_path(f.csv, "convergence CSV");
  PlotOptions options;
  options.init_bpc = f.init_bpc;
  options.teacher_bpc = f.teacher_bpc;
  const std::string svg = convergence_plot(read_text(f.csv), options);
  if (c.paths.out.empty()) {
    out << svg;
    return 0;
  }
  const fs::path dir = require_out(c);
  write_text(dir / "convergence.svg", svg);
  write_manifest(dir, "convergence-plot", c);
  out << "plot -> " << (dir / "convergence.svg").string() << "\n";
  return 0;
}

void use_stderr_logger() {
  static const bool once = [] {
    auto logger = spdlog::stderr_color_mt("matt-forge");
    spdlog::set_default_logger(logger);
    spdlog::cfg::load_env_levels();  // e.g. SPDLOG_LEVEL=debug for per-window diagnostics
    return true;
  }();
  (void)once;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  use_stderr_logger();
  CLI::App app{"matt-forge: tokenizer transfer by attention-informed matching"};
  app.name("matt-forge");
  app.require_subcommand(1, 1);
  Flags f;

  auto* train_tok = app.add_subcommand("train-tokenizer", "Train a byte-level BPE vocabulary");
  add_common(*train_tok, f);
  train_tok->add_option("--corpus", f.corpus, "Training corpus (.jsonl or plain text)");
  train_tok->add_option("--size", f.size, "Target vocabulary size");

  auto* extend = app.add_subcommand("extend-vocab", "Train an addon vocabulary and append its new tokens");
  add_common(*extend, f);
  extend->add_option("--base", f.base, "Base vocabulary");
  extend->add_option("--corpus", f.corpus, "Corpus for the addon vocabulary");
  extend->add_option("--size", f.size, "Addon vocabulary size");

  auto* compress = app.add_subcommand("compression-report", "Characters per token for vocab x corpus");
  add_common(*compress, f);
  compress->add_option("--vocab", f.vocab_specs, "NAME=PATH (repeatable)");
  compress->add_option("--corpus", f.corpus_specs, "NAME=PATH (repeatable)");

  auto* pretrain = app.add_subcommand("pretrain-teacher", "Language-model pretraining of the teacher");
  add_common(*pretrain, f);
  pretrain->add_option("--corpus", f.corpus, "Training corpus");
  pretrain->add_option("--eval-corpus", f.eval_corpus, "Held-out corpus for a final BPC");
  pretrain->add_option("--vocab", f.vocab, "Base vocabulary");
  pretrain->add_option("--steps", f.steps, "Override pretraining steps");

  auto* init = app.add_subcommand("init-embeddings", "Initialize the student embedding matrix");
  add_common(*init, f);
  init->add_option("--teacher", f.teacher, "Teacher checkpoint directory");
  init->add_option("--base", f.base, "Base vocabulary");
  init->add_option("--ext", f.ext, "Extended vocabulary");
  init->add_option("--corpus", f.corpus, "Corpus for auxiliary embeddings");

  auto* matt = app.add_subcommand("matt-train", "Train new-token embeddings against the AIM objective");
  add_common(*matt, f);
  matt->add_option("--teacher", f.teacher, "Teacher checkpoint directory");
  matt->add_option("--base", f.base, "Base vocabulary");
  matt->add_option("--ext", f.ext, "Extended vocabulary");
  matt->add_option("--corpus", f.corpus, "Training corpus");
  matt->add_option("--eval-corpus", f.eval_corpus, "Held-out corpus for scheduled BPC");
  matt->add_option("--init-checkpoint", f.init_checkpoint, "Start from this student checkpoint");
  matt->add_option("--steps", f.steps, "Override training steps");

  auto* eval = app.add_subcommand("eval-bpc", "Bits per character of a checkpoint");
  add_common(*eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint directory");
  eval->add_option("--vocab", f.vocab, "Vocabulary matching the checkpoint");
  eval->add_option("--corpus", f.corpus, "Evaluation corpus");

  auto* align = app.add_subcommand("align-dump", "Print the segment alignment of one text");
  add_common(*align, f);
  align->add_option("--teacher", f.teacher, "Teacher vocabulary")->required();
  align->add_option("--student", f.student, "Student vocabulary")->required();
  align->add_option("--text", f.text, "Text to align")->required();
  align->add_option("--svg", f.svg, "Also write an SVG of the segment matrices");

  auto* plot = app.add_subcommand("convergence-plot", "Render a convergence CSV as SVG");
  add_common(*plot, f);
  plot->add_option("--csv", f.csv, "convergence.csv from matt-train")->required();
  plot->add_option("--init-bpc", f.init_bpc, "Reference line: initialized student");
  plot->add_option("--teacher-bpc", f.teacher_bpc, "Reference line: teacher");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      // --help or --help-all.
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (*train_tok) return cmd_train_tokenizer(f, out);
    if (*extend) return cmd_extend_vocab(f, out);
    if (*compress) return cmd_compression_report(f, out);
    if (*pretrain) return cmd_pretrain_teacher(f, out);
    if (*init) return cmd_init_embeddings(f, out);
    if (*matt) return cmd_matt_train(f, out);
    if (*eval) return cmd_eval_bpc(f, out);
    if (*align) return cmd_align_dump(f, out);
    if (*plot) return cmd_convergence_plot(f, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mattforge::cli
