#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mattforge {

/// A corpus is an ordered list of documents. Statistics that depend on
/// adjacency (pair counts, co-occurrence windows) never cross documents.
using Corpus = std::vector<std::string>;

/// Loads a corpus file. `.jsonl` files hold one `{"text": ...}` object per
/// line; any other file is read as a single document.
Corpus load_corpus(const std::filesystem::path& path);

void save_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus);

std::size_t corpus_bytes(const Corpus& corpus);

}  // namespace mattforge
