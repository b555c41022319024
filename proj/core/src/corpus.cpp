#include "mattforge/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mattforge/error.hpp"

namespace mattforge {

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus " + path.string());
  Corpus docs;
  if (path.extension() == ".jsonl") {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        auto record = nlohmann::json::parse(line);
        docs.push_back(record.at("text").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  } else {
    std::ostringstream buffer;
    buffer << in.rdbuf();
    docs.push_back(buffer.str());
  }
  return docs;
}

void save_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& doc : corpus) out << nlohmann::json{{"text", doc}}.dump() << '\n';
}

std::size_t corpus_bytes(const Corpus& corpus) {
  std::size_t total = 0;
  for (const auto& doc : corpus) total += doc.size();
  return total;
}

}  // namespace mattforge
