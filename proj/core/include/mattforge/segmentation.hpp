#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mattforge/tokenizer.hpp"

namespace mattforge {

/// Shared segment ids for two tokenizations of one string.
///
/// Both id lists are non-decreasing and cover 0..m-1 without gaps. Segment k
/// spans the same text interval on both sides. `ell_*[k]` is the index of the
/// last token of segment k on that side; it is strictly increasing in k.
struct SegmentAlignment {
  std::vector<int> teacher_seg;
  std::vector<int> student_seg;
  int m = 0;
  std::vector<int> ell_teacher;
  std::vector<int> ell_student;

  friend bool operator==(const SegmentAlignment&, const SegmentAlignment&) = default;
};

/// Offset-based segmentation. Every position that ends a token on both sides
/// becomes a segment boundary, which yields the shortest segments that never
/// cut through a token of either tokenization.
///
/// Both lists must tile the same interval [0, L) contiguously (empty spans are
/// allowed). Works on any unit: characters or bytes.
SegmentAlignment align_offsets(std::span<const Span> teacher, std::span<const Span> student);

/// Prepends a BOS position to both token streams: segment 0 becomes the BOS
/// segment (index 0 on each side) and every other segment id shifts by one.
SegmentAlignment with_bos(const SegmentAlignment& alignment);

/// Keeps segments [0, count) and the tokens belonging to them.
SegmentAlignment truncate_segments(const SegmentAlignment& alignment, int count);

/// Per segment (teacher token count, student token count).
std::vector<std::pair<int, int>> segment_token_counts(const SegmentAlignment& alignment);

/// Validates the structural invariants; throws Error describing the first
/// violation.
void check_alignment(const SegmentAlignment& alignment);

/// JSON record {teacher_seg, student_seg, ell_teacher, ell_student, m}.
std::string alignment_to_json(const SegmentAlignment& alignment);

struct AlignmentSvgOptions {
  std::vector<std::string> teacher_labels;
  std::vector<std::string> student_labels;
  int cell = 22;
};

/// Side-by-side lower-triangular token matrices (query rows, key columns);
/// each cell is colored and numbered by the segment of its key token.
std::string alignment_svg(const SegmentAlignment& alignment, const AlignmentSvgOptions& options = {});

}  // namespace mattforge
