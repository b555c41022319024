#include "mattforge/segmentation.hpp"

#include <sstream>

#include <json.hpp>

#include "mattforge/error.hpp"

namespace mattforge {
namespace {

void check_tiling(std::span<const Span> offsets, const char* side) {
  std::int64_t cursor = 0;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    if (offsets[k].start != cursor || offsets[k].end < offsets[k].start) {
      throw Error(std::string("non-contiguous ") + side + " offsets at token " + std::to_string(k));
    }
    cursor = offsets[k].end;
  }
}

std::vector<int> last_index_per_segment(const std::vector<int>& seg, int m) {
  std::vector<int> ell(static_cast<std::size_t>(m), -1);
  for (std::size_t i = 0; i < seg.size(); ++i) ell[seg[i]] = static_cast<int>(i);
  return ell;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

SegmentAlignment align_offsets(std::span<const Span> teacher, std::span<const Span> student) {
  check_tiling(teacher, "teacher");
  check_tiling(student, "student");
  const std::int64_t teacher_len = teacher.empty() ? 0 : teacher.back().end;
  const std::int64_t student_len = student.empty() ? 0 : student.back().end;
  if (teacher_len != student_len) throw Error("offset span mismatch");

  SegmentAlignment out;
  out.teacher_seg.reserve(teacher.size());
  out.student_seg.reserve(student.size());

  std::size_t ti = 0;
  std::size_t si = 0;
  std::int64_t end = -1;
  int k = -1;
  while (ti < teacher.size() || si < student.size()) {
    if (ti == teacher.size()) {
      for (; si < student.size(); ++si) out.student_seg.push_back(k);
      break;
    }
    if (si == student.size()) {
      for (; ti < teacher.size(); ++ti) out.teacher_seg.push_back(k);
      break;
    }
    const Span& t = teacher[ti];
    const Span& s = student[si];
    // A token that starts before the current boundary, or an empty one sitting
    // on it, stays in the open segment.
    if (t.start < end || t.end <= end) {
      out.teacher_seg.push_back(k);
      ++ti;
      end = std::max(end, t.end);
    } else if (s.start < end || s.end <= end) {
      out.student_seg.push_back(k);
      ++si;
      end = std::max(end, s.end);
    } else {
      ++k;
      out.teacher_seg.push_back(k);
      out.student_seg.push_back(k);
      ++ti;
      ++si;
      end = std::max(t.end, s.end);
    }
  }
  out.m = k + 1;
  out.ell_teacher = last_index_per_segment(out.teacher_seg, out.m);
  out.ell_student = last_index_per_segment(out.student_seg, out.m);
  return out;
}

SegmentAlignment with_bos(const SegmentAlignment& a) {
  SegmentAlignment out;
  out.m = a.m + 1;
  out.teacher_seg.push_back(0);
  for (int s : a.teacher_seg) out.teacher_seg.push_back(s + 1);
  out.student_seg.push_back(0);
  for (int s : a.student_seg) out.student_seg.push_back(s + 1);
  out.ell_teacher.push_back(0);
  for (int e : a.ell_teacher) out.ell_teacher.push_back(e + 1);
  out.ell_student.push_back(0);
  for (int e : a.ell_student) out.ell_student.push_back(e + 1);
  return out;
}

SegmentAlignment truncate_segments(const SegmentAlignment& a, int count) {
  if (count < 0 || count > a.m) throw Error("segment count out of range");
  SegmentAlignment out;
  out.m = count;
  if (count == 0) return out;
  out.ell_teacher.assign(a.ell_teacher.begin(), a.ell_teacher.begin() + count);
  out.ell_student.assign(a.ell_student.begin(), a.ell_student.begin() + count);
  out.teacher_seg.assign(a.teacher_seg.begin(), a.teacher_seg.begin() + out.ell_teacher.back() + 1);
  out.student_seg.assign(a.student_seg.begin(), a.student_seg.begin() + out.ell_student.back() + 1);
  return out;
}

std::vector<std::pair<int, int>> segment_token_counts(const SegmentAlignment& a) {
  std::vector<std::pair<int, int>> counts(static_cast<std::size_t>(a.m), {0, 0});
  for (int s : a.teacher_seg) ++counts[s].first;
  for (int s : a.student_seg) ++counts[s].second;
  return counts;
}

void check_alignment(const SegmentAlignment& a) {
  auto check_side = [&](const std::vector<int>& seg, const std::vector<int>& ell, const char* side) {
    if (a.m == 0) {
      if (!seg.empty() || !ell.empty()) throw Error(std::string(side) + ": tokens without segments");
      return;
    }
    if (seg.empty() || seg.front() != 0 || seg.back() != a.m - 1) {
      throw Error(std::string(side) + ": segment ids must run from 0 to m-1");
    }
    for (std::size_t i = 1; i < seg.size(); ++i) {
      if (seg[i] != seg[i - 1] && seg[i] != seg[i - 1] + 1) {
        throw Error(std::string(side) + ": segment ids must be non-decreasing without gaps");
      }
    }
    if (ell != last_index_per_segment(seg, a.m)) {
      throw Error(std::string(side) + ": ell map does not match segment ids");
    }
  };
  check_side(a.teacher_seg, a.ell_teacher, "teacher");
  check_side(a.student_seg, a.ell_student, "student");
}

std::string alignment_to_json(const SegmentAlignment& a) {
  nlohmann::ordered_json j;
  j["teacher_seg"] = a.teacher_seg;
  j["student_seg"] = a.student_seg;
  j["ell_teacher"] = a.ell_teacher;
  j["ell_student"] = a.ell_student;
  j["m"] = a.m;
  return j.dump();
}

std::string alignment_svg(const SegmentAlignment& a, const AlignmentSvgOptions& options) {
  static constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                             "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  const int cell = options.cell;
  const int margin = 80;
  const int nt = static_cast<int>(a.teacher_seg.size());
  const int ns = static_cast<int>(a.student_seg.size());
  const int gap = 2 * cell;
  const int width = 2 * margin + (nt + ns) * cell + gap;
  const int height = 2 * margin + std::max(nt, ns) * cell;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"monospace\" font-size=\"" << cell / 2 << "\">\n";

  auto draw = [&](const std::vector<int>& seg, const std::vector<std::string>& labels, int x0,
                  const char* title) {
    const int n = static_cast<int>(seg.size());
    svg << "<text x=\"" << x0 << "\" y=\"" << margin / 3 << "\">" << title << "</text>\n";
    for (int j = 0; j < n; ++j) {
      const std::string label = j < static_cast<int>(labels.size()) ? escape_xml(labels[j]) : std::to_string(j);
      svg << "<text x=\"" << x0 + j * cell + cell / 4 << "\" y=\"" << margin - 6 << "\" transform=\"rotate(-60 "
          << x0 + j * cell + cell / 4 << ' ' << margin - 6 << ")\">" << label << "</text>\n";
      svg << "<text x=\"" << x0 - 4 << "\" y=\"" << margin + j * cell + cell * 2 / 3
          << "\" text-anchor=\"end\">" << label << "</text>\n";
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) {
        const int s = seg[j];
        svg << "<rect x=\"" << x0 + j * cell << "\" y=\"" << margin + i * cell << "\" width=\"" << cell
            << "\" height=\"" << cell << "\" fill=\"" << kPalette[s % 10] << "\" stroke=\"white\"/>"
            << "<text x=\"" << x0 + j * cell + cell / 2 << "\" y=\"" << margin + i * cell + cell * 2 / 3
            << "\" text-anchor=\"middle\" fill=\"white\">" << s << "</text>\n";
      }
    }
  };
  draw(a.teacher_seg, options.teacher_labels, margin, "teacher");
  draw(a.student_seg, options.student_labels, margin + nt * cell + gap, "student");
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace mattforge
