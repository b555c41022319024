#include <gtest/gtest.h>

#include <cmath>

#include "mattforge/error.hpp"
#include "mattforge/eval.hpp"
#include "support/oracles.hpp"

using namespace mattforge;

namespace {

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

ModelConfig small(int vocab, int max_seq) {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.head_dim = 4;
  c.vocab_size = vocab;
  c.max_seq = max_seq;
  return c;
}

}  // namespace

TEST(Bpc, UniformLogitsGiveLogVocab) {
  const Vocab v = train_bpe({"ab"}, 257);
  auto p = init_params(small(257, 16), 1);
  p.embedding.setZero();  // every hidden state is zero, so logits are flat
  const Corpus corpus{"hello world", "an ascii document longer than one chunk of fifteen tokens"};
  const auto r = bits_per_char(ModelView<float>(p), v, corpus);
  EXPECT_EQ(r.tokens, r.chars);  // bytes only, ASCII
  EXPECT_NEAR(r.bpc, std::log2(257.0), 1e-5);
}

TEST(Bpc, MatchesManualChunking) {
  Rng rng(4);
  Corpus corpus;
  for (int i = 0; i < 6; ++i) corpus.push_back(oracle::random_text(rng, 120, true));
  const Vocab v = train_bpe(corpus, 290);
  const auto p = init_params(small(290, 9), 3);
  const ModelView<float> view(p);
  const auto r = bits_per_char(view, v, corpus);

  double nats = 0;
  std::int64_t chars = 0, tokens = 0;
  for (const auto& doc : corpus) {
    chars += count_chars(doc);
    const auto ids = encode(v, doc).ids;
    for (std::size_t s = 0; s < ids.size(); s += 8) {
      std::vector<TokenId> seq{v.bos()};
      for (std::size_t k = s; k < std::min(ids.size(), s + 8); ++k) seq.push_back(ids[k]);
      const auto logits = lm_logits(view, seq).cast<double>();
      for (std::size_t t = 1; t < seq.size(); ++t) {
        const auto row = logits.row(static_cast<Eigen::Index>(t - 1));
        const double peak = row.maxCoeff();
        nats -= row(seq[t]) - peak - std::log((row.array() - peak).exp().sum());
        ++tokens;
      }
    }
  }
  EXPECT_EQ(r.chars, chars);
  EXPECT_EQ(r.tokens, tokens);
  EXPECT_NEAR(r.bpc, nats / std::log(2.0) / static_cast<double>(chars), 1e-6);
}

TEST(Bpc, RechunkInvarianceUnderFlatModel) {
  // With flat logits every token costs log V, so bpc depends only on the
  // token/char totals, not on document boundaries or chunk size.
  const Vocab v = train_bpe({"ab"}, 257);
  auto a = init_params(small(257, 8), 1);
  auto b = init_params(small(257, 64), 1);
  a.embedding.setZero();
  b.embedding.setZero();
  const Corpus joined{"some text that spans several chunks for sure"};
  const Corpus split{"some text that ", "spans several", " chunks for sure"};
  const double ref = bits_per_char(ModelView<float>(a), v, joined).bpc;
  EXPECT_NEAR(bits_per_char(ModelView<float>(b), v, joined).bpc, ref, 1e-6);
  EXPECT_NEAR(bits_per_char(ModelView<float>(a), v, split).bpc, ref, 1e-6);
}

TEST(Bpc, Errors) {
  const Vocab v = train_bpe({"ab"}, 257);
  const auto p = init_params(small(257, 8), 1);
  EXPECT_THROW(bits_per_char(ModelView<float>(p), v, {}), Error);
  EXPECT_THROW(bits_per_char(ModelView<float>(p), v, {""}), Error);
  const auto q = init_params(small(300, 8), 1);
  EXPECT_THROW(bits_per_char(ModelView<float>(q), v, {"x"}), Error);
}

TEST(Bpc, ReportJson) {
  EvalReport r{.bpc = 1.5, .nats = 2, .tokens = 3, .chars = 4, .vocab_id = "v", .checkpoint_id = "c"};
  const auto j = r.to_json();
  EXPECT_NE(j.find("\"bpc\": 1.5"), std::string::npos);
  EXPECT_NE(j.find("\"checkpoint_id\": \"c\""), std::string::npos);
}

TEST(Compression, Report) {
  const Vocab bytes = train_bpe({"ab"}, 257);
  const Vocab ab = oracle::vocab_from_words({"ab"});
  const Corpus c1{"abab"}, c2{"ab", "xy"};
  const auto t = compression_report({{"bytes", &bytes}, {"ab", &ab}}, {{"c1", &c1}, {"c2", &c2}});
  ASSERT_EQ(t.cells.size(), 4u);
  for (const auto& cell : t.cells) {
    if (cell.vocab == "ab" && cell.corpus == "c1") EXPECT_DOUBLE_EQ(cell.rate, 2.0);
    if (cell.vocab == "bytes") EXPECT_DOUBLE_EQ(cell.rate, 1.0);
    if (cell.vocab == "ab" && cell.corpus == "c2") EXPECT_DOUBLE_EQ(cell.rate, 4.0 / 3.0);
  }
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "vocab,corpus,chars,tokens,compression");
  EXPECT_EQ(count(csv, "\n"), 5u);
  EXPECT_NE(t.to_text().find("2.0000"), std::string::npos);
  const Corpus empty{""};
  EXPECT_THROW(compression_report({{"ab", &ab}}, {{"e", &empty}}), Error);
}

TEST(Plot, DrawsBpcWithReferences) {
  const std::string csv = "step,tokens_seen,aim_loss,wall_ms,bpc\n0,0,1.0,1,3.5\n10,100,0.5,2,\n20,200,0.25,3,3.0\n";
  const auto svg = convergence_plot(csv, {.init_bpc = 3.6, .teacher_bpc = 2.5});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_EQ(count(svg, "class=\"point\""), 2u);  // rows without bpc are skipped
  EXPECT_EQ(count(svg, "class=\"series\""), 1u);
  EXPECT_EQ(count(svg, "class=\"ref-init\""), 1u);
  EXPECT_EQ(count(svg, "class=\"ref-teacher\""), 1u);
}

TEST(Plot, FallsBackToLoss) {
  const std::string csv = "step,tokens_seen,aim_loss,wall_ms\n0,0,1.0,1\n10,100,0.5,2\n20,200,0.25,3\n";
  const auto svg = convergence_plot(csv);
  EXPECT_EQ(count(svg, "class=\"point\""), 3u);
  EXPECT_EQ(count(svg, "class=\"ref-init\""), 0u);
}

TEST(Plot, ReportsLineNumbers) {
  try {
    convergence_plot("step,tokens_seen,aim_loss\n0,0,1\n1,x,2\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("line 3:", 0), 0u) << e.what();
  }
  try {
    convergence_plot("step,tokens_seen,aim_loss\n0,0\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("line 2:", 0), 0u) << e.what();
  }
  EXPECT_THROW(convergence_plot(""), Error);
  EXPECT_THROW(convergence_plot("a,b\n1,2\n"), Error);
}
