#include "mattforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mattforge/error.hpp"

namespace mattforge {

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["bpc"] = bpc;
  j["nats"] = nats;
  j["tokens"] = tokens;
  j["chars"] = chars;
  j["vocab_id"] = vocab_id;
  j["checkpoint_id"] = checkpoint_id;
  return j.dump(2);
}

EvalReport bits_per_char(const ModelView<float>& model, const Vocab& vocab, const Corpus& corpus) {
  if (static_cast<std::size_t>(model.vocab_size()) != vocab.size()) {
    throw Error("model embedding does not match the vocabulary");
  }
  EvalReport report;
  const auto chunk = static_cast<std::size_t>(model.config().max_seq - 1);
  std::vector<TokenId> seq;
  for (const auto& doc : corpus) {
    if (doc.empty()) continue;
    const auto ids = encode(vocab, doc).ids;
    report.chars += count_chars(doc);
    for (std::size_t start = 0; start < ids.size(); start += chunk) {
      const std::size_t len = std::min(chunk, ids.size() - start);
      seq.assign(1, vocab.bos());
      seq.insert(seq.end(), ids.begin() + static_cast<std::ptrdiff_t>(start),
                 ids.begin() + static_cast<std::ptrdiff_t>(start + len));
      for (double lp : target_log_probs(model, std::span<const TokenId>(seq))) report.nats -= lp;
      report.tokens += static_cast<std::int64_t>(len);
    }
  }
  if (report.chars == 0) throw Error("empty corpus");
  report.bpc = report.nats / std::numbers::ln2 / static_cast<double>(report.chars);
  return report;
}

std::string CompressionTable::to_csv() const {
  std::string out = "vocab,corpus,chars,tokens,compression\n";
  for (const auto& c : cells) out += fmt::format("{},{},{},{},{:.6f}\n", c.vocab, c.corpus, c.chars, c.tokens, c.rate);
  return out;
}

std::string CompressionTable::to_text() const {
  std::size_t vw = 5, cw = 6;
  for (const auto& c : cells) {
    vw = std::max(vw, c.vocab.size());
    cw = std::max(cw, c.corpus.size());
  }
  std::string out = fmt::format("{:<{}}  {:<{}}  {:>10}  {:>10}  {:>11}\n", "vocab", vw, "corpus", cw, "chars", "tokens",
                                "chars/token");
  for (const auto& c : cells) {
    out += fmt::format("{:<{}}  {:<{}}  {:>10}  {:>10}  {:>11.4f}\n", c.vocab, vw, c.corpus, cw, c.chars, c.tokens, c.rate);
  }
  return out;
}

CompressionTable compression_report(const std::vector<std::pair<std::string, const Vocab*>>& vocabs,
                                    const std::vector<std::pair<std::string, const Corpus*>>& corpora) {
  CompressionTable table;
  for (const auto& [vname, vocab] : vocabs) {
    for (const auto& [cname, corpus] : corpora) {
      CompressionCell cell{vname, cname, 0.0, 0, 0};
      for (const auto& doc : *corpus) {
        cell.chars += count_chars(doc);
        cell.tokens += static_cast<std::int64_t>(encode(*vocab, doc).ids.size());
      }
      if (cell.tokens == 0) throw Error("empty corpus: " + cname);
      cell.rate = static_cast<double>(cell.chars) / static_cast<double>(cell.tokens);
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

namespace {

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    out.emplace_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

double parse_number(const std::string& field, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw Error(fmt::format("line {}: bad number '{}'", line_no, field));
  }
}

}  // namespace

std::string convergence_plot(std::string_view csv, const PlotOptions& options) {
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < csv.size();) {
    auto end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    auto line = csv.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error("line 1: missing header");

  const auto header = split_csv(lines[0]);
  auto column = [&](const char* name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int c_tokens = column("tokens_seen");
  const int c_loss = column("aim_loss");
  const int c_bpc = column("bpc");
  if (column("step") < 0 || c_tokens < 0 || c_loss < 0) throw Error("line 1: header needs step, tokens_seen, aim_loss");

  struct Point {
    double x, loss;
    std::optional<double> bpc;
  };
  std::vector<Point> points;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv(lines[i]);
    if (fields.size() != header.size()) throw Error(fmt::format("line {}: expected {} fields", i + 1, header.size()));
    Point p{parse_number(fields[c_tokens], i + 1), parse_number(fields[c_loss], i + 1), std::nullopt};
    if (c_bpc >= 0 && !fields[c_bpc].empty()) p.bpc = parse_number(fields[c_bpc], i + 1);
    points.push_back(p);
  }

  const bool use_bpc = std::any_of(points.begin(), points.end(), [](const Point& p) { return p.bpc.has_value(); });
  std::vector<std::pair<double, double>> series;
  for (const auto& p : points) {
    if (use_bpc && !p.bpc) continue;
    series.emplace_back(p.x, use_bpc ? *p.bpc : p.loss);
  }

  double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  std::vector<double> ys;
  for (const auto& [x, y] : series) ys.push_back(y);
  if (use_bpc && options.init_bpc) ys.push_back(*options.init_bpc);
  if (use_bpc && options.teacher_bpc) ys.push_back(*options.teacher_bpc);
  if (!series.empty()) {
    x_lo = series.front().first;
    x_hi = series.front().first;
    for (const auto& [x, y] : series) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
    }
  }
  if (!ys.empty()) {
    y_lo = *std::min_element(ys.begin(), ys.end());
    y_hi = *std::max_element(ys.begin(), ys.end());
  }
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;
  if (y_hi <= y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  const double left = 70, right = 20, top = 30, bottom = 50;
  const double w = options.width, h = options.height;
  auto sx = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * (w - left - right); };
  auto sy = [&](double y) { return top + (y_hi - y) / (y_hi - y_lo) * (h - top - bottom); };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      options.width, options.height, options.width, options.height);
  svg += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", options.width, options.height);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, h - bottom, w - right);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top, h - bottom);
  for (int t = 0; t <= 4; ++t) {
    const double yv = y_lo + (y_hi - y_lo) * t / 4.0;
    const double xv = x_lo + (x_hi - x_lo) * t / 4.0;
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3f}</text>\n", left - 6, sy(yv) + 4, yv);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.3g}</text>\n", sx(xv), h - bottom + 16, xv);
  }
  svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">tokens seen</text>\n", (left + w - right) / 2,
                     h - 10);
  svg += fmt::format("<text x=\"14\" y=\"{:.1f}\" transform=\"rotate(-90 14 {:.1f})\" text-anchor=\"middle\">{}</text>\n",
                     (top + h - bottom) / 2, (top + h - bottom) / 2, use_bpc ? "bits per char" : "AIM loss");

  auto reference = [&](const char* cls, const char* label, const char* color, double value) {
    svg += fmt::format(
        "<line class=\"{}\" x1=\"{:.1f}\" y1=\"{:.2f}\" x2=\"{:.1f}\" y2=\"{:.2f}\" stroke=\"{}\" stroke-dasharray=\"6 4\"/>\n",
        cls, left, sy(value), w - right, sy(value), color);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.2f}\" text-anchor=\"end\" fill=\"{}\">{} {:.3f}</text>\n", w - right - 4,
                       sy(value) - 4, color, label, value);
  };
  if (use_bpc && options.init_bpc) reference("ref-init", "init", "#c0392b", *options.init_bpc);
  if (use_bpc && options.teacher_bpc) reference("ref-teacher", "teacher", "#27ae60", *options.teacher_bpc);

  if (!series.empty()) {
    svg += "<polyline class=\"series\" fill=\"none\" stroke=\"#2c3e50\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series.size(); ++i) {
      svg += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", sx(series[i].first), sy(series[i].second));
    }
    svg += "\"/>\n";
    for (const auto& [x, y] : series) {
      svg += fmt::format("<circle class=\"point\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"#2c3e50\"/>\n", sx(x), sy(y));
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace mattforge
