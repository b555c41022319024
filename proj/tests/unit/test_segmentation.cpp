#include <gtest/gtest.h>

#include "mattforge/error.hpp"
#include "mattforge/rng.hpp"
#include "mattforge/segmentation.hpp"
#include "support/oracles.hpp"

using namespace mattforge;

namespace {

std::vector<Span> spans(std::initializer_list<std::pair<int, int>> list) {
  std::vector<Span> out;
  for (auto [a, b] : list) out.push_back({a, b});
  return out;
}

}  // namespace

TEST(Align, FormulaFixture) {
  const Vocab teacher = oracle::vocab_from_words({" for", "m", "ula"});
  const Vocab student = oracle::vocab_from_words({" form", "ula"});
  const auto t = encode(teacher, " formula");
  const auto s = encode(student, " formula");
  ASSERT_EQ(t.ids.size(), 3u);
  ASSERT_EQ(s.ids.size(), 2u);
  const auto a = align_offsets(t.offsets, s.offsets);
  EXPECT_EQ(a.m, 2);
  EXPECT_EQ(segment_token_counts(a), (std::vector<std::pair<int, int>>{{2, 1}, {1, 1}}));
  EXPECT_EQ(a.teacher_seg, (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(a.student_seg, (std::vector<int>{0, 1}));
  EXPECT_EQ(a.ell_teacher, (std::vector<int>{1, 2}));
  EXPECT_EQ(a.ell_student, (std::vector<int>{0, 1}));
}

TEST(Align, IdenticalTokenizationsAreOneToOne) {
  const auto t = spans({{0, 2}, {2, 3}, {3, 7}});
  const auto a = align_offsets(t, t);
  EXPECT_EQ(a.m, 3);
  for (auto [nt, ns] : segment_token_counts(a)) {
    EXPECT_EQ(nt, 1);
    EXPECT_EQ(ns, 1);
  }
}

TEST(Align, EmptyInput) {
  const auto a = align_offsets({}, {});
  EXPECT_EQ(a.m, 0);
  EXPECT_NO_THROW(check_alignment(a));
}

TEST(Align, EmptySpansJoinTheirBoundarySegment) {
  const auto t = spans({{0, 1}, {1, 2}, {2, 2}});
  const auto s = spans({{0, 2}});
  const auto a = align_offsets(t, s);
  EXPECT_EQ(a, oracle::common_boundary_segments(t, s));
  EXPECT_EQ(a.m, 1);
  EXPECT_EQ(a.teacher_seg, (std::vector<int>{0, 0, 0}));
}

TEST(Align, RejectsMismatchedOrBrokenOffsets) {
  EXPECT_THROW(align_offsets(spans({{0, 3}}), spans({{0, 2}})), Error);
  EXPECT_THROW(align_offsets(spans({{0, 1}, {2, 3}}), spans({{0, 3}})), Error);
}

TEST(Align, MatchesOracleOnRandomTokenizations) {
  Rng rng(3);
  Corpus c1, c2;
  for (int i = 0; i < 200; ++i) c1.push_back(oracle::random_text(rng, 60, true));
  for (int i = 0; i < 200; ++i) c2.push_back(oracle::random_text(rng, 60, true));
  const Vocab a = train_bpe(c1, 300);
  const Vocab b = train_bpe(c2, 340);
  for (int i = 0; i < 500; ++i) {
    const std::string text = oracle::random_text(rng, 120, true);
    const auto t = encode(a, text);
    const auto s = encode(b, text);
    const auto got = align_offsets(t.offsets, s.offsets);
    ASSERT_EQ(got, oracle::common_boundary_segments(t.offsets, s.offsets)) << text;
    ASSERT_NO_THROW(check_alignment(got));
    // Byte offsets segment the same way when no token ends mid-character.
    const auto by_bytes = align_offsets(t.byte_offsets, s.byte_offsets);
    ASSERT_EQ(by_bytes, oracle::common_boundary_segments(t.byte_offsets, s.byte_offsets));
  }
}

TEST(Align, SegmentsCoverEqualText) {
  // Every segment spans the same interval on both sides.
  Rng rng(8);
  Corpus c;
  for (int i = 0; i < 100; ++i) c.push_back(oracle::random_text(rng, 50));
  const Vocab a = train_bpe(c, 280);
  const Vocab b = train_bpe(c, 330);
  for (int i = 0; i < 200; ++i) {
    const std::string text = oracle::random_text(rng, 100);
    const auto t = encode(a, text);
    const auto s = encode(b, text);
    const auto al = align_offsets(t.offsets, s.offsets);
    for (int k = 0; k < al.m; ++k) {
      ASSERT_EQ(t.offsets[static_cast<std::size_t>(al.ell_teacher[static_cast<std::size_t>(k)])].end,
                s.offsets[static_cast<std::size_t>(al.ell_student[static_cast<std::size_t>(k)])].end);
    }
  }
}

TEST(WithBos, ShiftsSegments) {
  const auto a = align_offsets(spans({{0, 1}, {1, 2}}), spans({{0, 2}}));
  const auto b = with_bos(a);
  EXPECT_EQ(b.m, a.m + 1);
  EXPECT_EQ(b.teacher_seg, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(b.student_seg, (std::vector<int>{0, 1}));
  EXPECT_EQ(b.ell_teacher, (std::vector<int>{0, 2}));
  EXPECT_EQ(b.ell_student, (std::vector<int>{0, 1}));
  EXPECT_NO_THROW(check_alignment(b));
}

TEST(Truncate, KeepsPrefix) {
  const auto a = align_offsets(spans({{0, 1}, {1, 2}, {2, 4}}), spans({{0, 2}, {2, 3}, {3, 4}}));
  ASSERT_EQ(a.m, 2);
  const auto t = truncate_segments(a, 1);
  EXPECT_EQ(t.m, 1);
  EXPECT_EQ(t.teacher_seg.size(), 2u);
  EXPECT_EQ(t.student_seg.size(), 1u);
  EXPECT_NO_THROW(check_alignment(t));
  EXPECT_EQ(truncate_segments(a, 2), a);
  EXPECT_EQ(truncate_segments(a, 0).m, 0);
  EXPECT_THROW(truncate_segments(a, 3), Error);
}

TEST(CheckAlignment, DetectsViolations) {
  SegmentAlignment a;
  a.m = 2;
  a.teacher_seg = {0, 1};
  a.student_seg = {0, 1};
  a.ell_teacher = {0, 1};
  a.ell_student = {0, 1};
  EXPECT_NO_THROW(check_alignment(a));
  auto gap = a;
  gap.teacher_seg = {0, 2};
  EXPECT_THROW(check_alignment(gap), Error);
  auto dec = a;
  dec.student_seg = {1, 0};
  EXPECT_THROW(check_alignment(dec), Error);
  auto ell = a;
  ell.ell_teacher = {1, 1};
  EXPECT_THROW(check_alignment(ell), Error);
}

TEST(Export, JsonAndSvg) {
  const auto a = align_offsets(spans({{0, 1}, {1, 2}}), spans({{0, 2}}));
  const std::string j = alignment_to_json(a);
  EXPECT_NE(j.find("\"teacher_seg\""), std::string::npos);
  EXPECT_NE(j.find("\"ell_student\""), std::string::npos);
  const std::string svg = alignment_svg(a, {.teacher_labels = {"a", "<b>"}, .student_labels = {"ab"}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("&lt;b&gt;"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Align, ContinuationByteTokenStaysWithItsCharacter) {
  // A continuation-byte token reports an empty span at its character's end.
  const auto t = spans({{0, 1}, {1, 2}, {2, 3}, {3, 3}, {3, 4}});
  const auto s = spans({{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  const auto a = align_offsets(t, s);
  EXPECT_EQ(a, oracle::common_boundary_segments(t, s));
  EXPECT_EQ(a.teacher_seg, (std::vector<int>{0, 1, 2, 2, 3}));
}
