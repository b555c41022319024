#include "mattforge/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "mattforge/error.hpp"

namespace mattforge {
namespace {

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}

bool is_lead_byte(unsigned char c) { return (c & 0xC0) != 0x80; }

std::string special_bytes(const std::string& name) { return "<" + name + ">"; }

// Pair statistics for the trainer. Small vocabularies use a dense table, which
// keeps per-merge recounts cheap; larger ones fall back to a hash map.
class PairCounter {
 public:
  explicit PairCounter(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ <= kDenseLimit) dense_.assign(capacity_ * capacity_, 0);
  }

  void add(std::span<const TokenId> seq, std::int64_t sign) {
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) bump(seq[i], seq[i + 1], sign);
  }

  struct Best {
    TokenId left = -1;
    TokenId right = -1;
    std::int64_t count = 0;
  };

  Best best(const std::vector<std::string>& tokens) const {
    Best best;
    auto consider = [&](TokenId l, TokenId r, std::int64_t count) {
      if (count <= 0) return;
      if (count > best.count ||
          (count == best.count && std::tie(tokens[l], tokens[r]) <
                                      std::tie(tokens[best.left], tokens[best.right]))) {
        best = {l, r, count};
      }
    };
    if (!dense_.empty()) {
      const std::size_t n = tokens.size();
      for (std::size_t l = 0; l < n; ++l) {
        const std::int64_t* row = dense_.data() + l * capacity_;
        for (std::size_t r = 0; r < n; ++r) {
          if (row[r] > 0) consider(static_cast<TokenId>(l), static_cast<TokenId>(r), row[r]);
        }
      }
    } else {
      for (const auto& [key, count] : sparse_) {
        consider(static_cast<TokenId>(key >> 32), static_cast<TokenId>(key & 0xffffffffu), count);
      }
    }
    return best;
  }

 private:
  static constexpr std::size_t kDenseLimit = 2048;

  void bump(TokenId l, TokenId r, std::int64_t delta) {
    if (!dense_.empty()) {
      dense_[static_cast<std::size_t>(l) * capacity_ + static_cast<std::size_t>(r)] += delta;
      return;
    }
    auto& slot = sparse_[pair_key(l, r)];
    slot += delta;
    if (slot == 0) sparse_.erase(pair_key(l, r));
  }

  std::size_t capacity_;
  std::vector<std::int64_t> dense_;
  std::unordered_map<std::uint64_t, std::int64_t> sparse_;
};

// Greedy left-to-right replacement of (left, right) by out. Returns whether
// anything changed.
bool apply_merge(std::vector<TokenId>& seq, TokenId left, TokenId right, TokenId out) {
  bool changed = false;
  std::size_t write = 0;
  for (std::size_t read = 0; read < seq.size(); ++read) {
    if (read + 1 < seq.size() && seq[read] == left && seq[read + 1] == right) {
      seq[write++] = out;
      ++read;
      changed = true;
    } else {
      seq[write++] = seq[read];
    }
  }
  seq.resize(write);
  return changed;
}

bool contains_pair(const std::vector<TokenId>& seq, TokenId left, TokenId right) {
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    if (seq[i] == left && seq[i + 1] == right) return true;
  }
  return false;
}

constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab Vocab::create(std::vector<std::string> tokens, std::vector<MergeRule> merges,
                    std::map<std::string, TokenId> specials) {
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.merges_ = std::move(merges);
  v.specials_ = std::move(specials);
  const auto n = static_cast<TokenId>(v.tokens_.size());
  auto valid = [n](TokenId id) { return id >= 0 && id < n; };

  v.special_mask_.assign(v.tokens_.size(), false);
  for (const auto& [name, id] : v.specials_) {
    if (!valid(id)) throw Error("special token '" + name + "' has out-of-range id");
    if (v.special_mask_[id]) throw Error("two specials share id " + std::to_string(id));
    v.special_mask_[id] = true;
  }
  auto bos = v.specials_.find("bos");
  if (bos == v.specials_.end()) throw Error("vocabulary has no 'bos' special");
  v.bos_ = bos->second;

  for (TokenId id = 0; id < n; ++id) {
    if (v.special_mask_[id]) continue;
    if (v.tokens_[id].empty()) throw Error("token " + std::to_string(id) + " is empty");
    if (!v.by_bytes_.emplace(v.tokens_[id], id).second) {
      throw Error("duplicate token bytes at id " + std::to_string(id));
    }
  }
  for (int b = 0; b < 256; ++b) {
    auto it = v.by_bytes_.find(std::string(1, static_cast<char>(b)));
    if (it == v.by_bytes_.end()) throw Error("byte token " + std::to_string(b) + " missing");
    v.byte_ids_[b] = it->second;
  }

  for (std::size_t rank = 0; rank < v.merges_.size(); ++rank) {
    const auto& m = v.merges_[rank];
    if (!valid(m.left) || !valid(m.right) || !valid(m.out)) {
      throw Error("merge rule " + std::to_string(rank) + " references an unknown id");
    }
    if (v.special_mask_[m.left] || v.special_mask_[m.right] || v.special_mask_[m.out]) {
      throw Error("merge rule " + std::to_string(rank) + " involves a special token");
    }
    if (v.tokens_[m.out] != v.tokens_[m.left] + v.tokens_[m.right]) {
      throw Error("merge rule " + std::to_string(rank) + " output is not the concatenation of its inputs");
    }
    if (!v.merge_index_.emplace(pair_key(m.left, m.right), MergeEntry{static_cast<std::uint32_t>(rank), m.out})
             .second) {
      throw Error("duplicate merge rule at rank " + std::to_string(rank));
    }
  }
  return v;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("unknown token id " + std::to_string(id));
  }
  return tokens_[id];
}

bool Vocab::is_special(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < special_mask_.size() && special_mask_[id];
}

std::optional<TokenId> Vocab::find(std::string_view bytes) const {
  auto it = by_bytes_.find(std::string(bytes));
  if (it == by_bytes_.end()) return std::nullopt;
  return it->second;
}

std::optional<Vocab::MergeEntry> Vocab::merge_of(TokenId left, TokenId right) const {
  auto it = merge_index_.find(pair_key(left, right));
  if (it == merge_index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Training

Vocab train_bpe(const Corpus& corpus, std::size_t target_size, std::vector<std::string> special_names,
                const BpeOptions& options) {
  if (std::find(special_names.begin(), special_names.end(), "bos") == special_names.end()) {
    special_names.insert(special_names.begin(), "bos");
  }
  const std::size_t floor = 256 + special_names.size();
  if (target_size < floor) {
    throw Error("target size " + std::to_string(target_size) + " is below the byte floor " +
                std::to_string(floor));
  }
  if (corpus_bytes(corpus) == 0) throw Error("empty corpus");

  std::vector<std::string> tokens;
  tokens.reserve(target_size);
  for (int b = 0; b < 256; ++b) tokens.emplace_back(1, static_cast<char>(b));
  std::map<std::string, TokenId> specials;
  for (const auto& name : special_names) {
    if (!specials.emplace(name, static_cast<TokenId>(tokens.size())).second) {
      throw Error("duplicate special name '" + name + "'");
    }
    tokens.push_back(special_bytes(name));
  }

  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& doc : corpus) {
    std::vector<TokenId> seq(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) seq[i] = static_cast<unsigned char>(doc[i]);
    seqs.push_back(std::move(seq));
  }

  PairCounter counter(target_size);
  for (const auto& seq : seqs) counter.add(seq, +1);

  std::unordered_map<std::string, TokenId> by_bytes;
  for (TokenId id = 0; id < 256; ++id) by_bytes.emplace(tokens[id], id);

  std::vector<MergeRule> merges;
  std::size_t stalls = 0;
  while (tokens.size() < target_size) {
    const auto best = counter.best(tokens);
    if (best.count < std::max<std::int64_t>(options.min_pair_count, 1)) break;

    std::string merged = tokens[best.left] + tokens[best.right];
    TokenId out;
    if (auto it = by_bytes.find(merged); it != by_bytes.end()) {
      // Same bytes reachable through a different split; reuse the token.
      out = it->second;
      ++stalls;
    } else {
      out = static_cast<TokenId>(tokens.size());
      tokens.push_back(merged);
      by_bytes.emplace(std::move(merged), out);
    }
    merges.push_back({best.left, best.right, out});

    for (auto& seq : seqs) {
      if (!contains_pair(seq, best.left, best.right)) continue;
      counter.add(seq, -1);
      apply_merge(seq, best.left, best.right, out);
      counter.add(seq, +1);
    }
    if (stalls > target_size) break;
  }
  return Vocab::create(std::move(tokens), std::move(merges), std::move(specials));
}

// ---------------------------------------------------------------------------
// Encode / decode

std::int64_t count_chars(std::string_view text) {
  std::int64_t n = 0;
  for (unsigned char c : text) n += is_lead_byte(c) ? 1 : 0;
  return n;
}

TokenizationResult encode(const Vocab& vocab, std::string_view text) {
  TokenizationResult result;
  const std::size_t n = text.size();
  result.byte_len = static_cast<std::int64_t>(n);

  // chars_before[b] = number of characters whose lead byte is at a position < b
  std::vector<std::int64_t> chars_before(n + 1, 0);
  for (std::size_t b = 0; b < n; ++b) {
    chars_before[b + 1] = chars_before[b] + (is_lead_byte(static_cast<unsigned char>(text[b])) ? 1 : 0);
  }
  result.text_len = chars_before[n];
  if (n == 0) return result;

  struct Symbol {
    TokenId id;
    std::int64_t start;
    std::int64_t end;
    std::int64_t prev;
    std::int64_t next;
    bool alive;
  };
  std::vector<Symbol> symbols(n);
  for (std::size_t i = 0; i < n; ++i) {
    symbols[i] = {vocab.byte_token(static_cast<unsigned char>(text[i])),
                  static_cast<std::int64_t>(i),
                  static_cast<std::int64_t>(i + 1),
                  static_cast<std::int64_t>(i) - 1,
                  i + 1 < n ? static_cast<std::int64_t>(i + 1) : -1,
                  true};
  }

  struct Candidate {
    std::uint32_t rank;
    std::int64_t left;
    TokenId left_id;
    TokenId right_id;
    bool operator>(const Candidate& o) const {
      return rank != o.rank ? rank > o.rank : left > o.left;
    }
  };
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> queue;
  auto push_pair = [&](std::int64_t left) {
    if (left < 0) return;
    const std::int64_t right = symbols[left].next;
    if (right < 0) return;
    if (auto m = vocab.merge_of(symbols[left].id, symbols[right].id)) {
      queue.push({m->rank, left, symbols[left].id, symbols[right].id});
    }
  };
  for (std::size_t i = 0; i + 1 < n; ++i) push_pair(static_cast<std::int64_t>(i));

  while (!queue.empty()) {
    const Candidate c = queue.top();
    queue.pop();
    Symbol& left = symbols[c.left];
    if (!left.alive || left.id != c.left_id || left.next < 0) continue;
    Symbol& right = symbols[left.next];
    if (right.id != c.right_id) continue;

    left.id = vocab.merge_of(c.left_id, c.right_id)->out;
    left.end = right.end;
    right.alive = false;
    left.next = right.next;
    if (right.next >= 0) symbols[right.next].prev = c.left;

    push_pair(left.prev);
    push_pair(c.left);
  }

  for (std::int64_t i = 0; i >= 0; i = symbols[i].next) {
    const Symbol& s = symbols[i];
    result.ids.push_back(s.id);
    result.byte_offsets.push_back({s.start, s.end});
    result.offsets.push_back({chars_before[s.start], chars_before[s.end]});
  }
  return result;
}

std::string decode(const Vocab& vocab, std::span<const TokenId> ids, const DecodeOptions& options) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& bytes = vocab.token(id);
    if (vocab.is_special(id) && options.skip_specials) continue;
    out += bytes;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extension and measurement

VocabOverlap compute_overlap(const Vocab& base, const Vocab& extended) {
  VocabOverlap overlap;
  overlap.base_of.assign(extended.size(), -1);
  std::map<TokenId, std::string> special_names;
  for (const auto& [name, id] : extended.specials()) special_names[id] = name;

  for (TokenId id = 0; id < static_cast<TokenId>(extended.size()); ++id) {
    if (extended.is_special(id)) {
      auto it = base.specials().find(special_names[id]);
      if (it != base.specials().end()) overlap.base_of[id] = it->second;
    } else if (auto base_id = base.find(extended.token(id))) {
      overlap.base_of[id] = *base_id;
    }
    if (overlap.base_of[id] < 0) overlap.new_ids.push_back(id);
  }
  return overlap;
}

VocabExtension extend_vocab(const Vocab& base, const Vocab& addon) {
  std::vector<std::string> tokens = base.tokens();
  std::map<std::string, TokenId> specials = base.specials();
  std::vector<MergeRule> merges = base.merges();

  for (const auto& [name, addon_id] : addon.specials()) {
    const std::string& bytes = addon.token(addon_id);
    if (auto it = specials.find(name); it != specials.end()) {
      if (tokens[it->second] != bytes) {
        throw Error("special token collision: '" + name + "' has different bytes in base and addon");
      }
      continue;
    }
    if (base.find(bytes)) {
      throw Error("special token collision: '" + name + "' matches a regular base token");
    }
    specials.emplace(name, static_cast<TokenId>(tokens.size()));
    tokens.push_back(bytes);
  }

  std::unordered_map<std::string, TokenId> regular;
  for (TokenId id = 0; id < static_cast<TokenId>(base.size()); ++id) {
    if (!base.is_special(id)) regular.emplace(base.token(id), id);
  }
  std::vector<TokenId> remap(addon.size(), -1);
  for (TokenId id = 0; id < static_cast<TokenId>(addon.size()); ++id) {
    if (addon.is_special(id)) continue;
    const std::string& bytes = addon.token(id);
    auto [it, inserted] = regular.emplace(bytes, static_cast<TokenId>(tokens.size()));
    if (inserted) tokens.push_back(bytes);
    remap[id] = it->second;
  }

  std::unordered_map<std::uint64_t, bool> seen;
  for (const auto& m : merges) seen.emplace(pair_key(m.left, m.right), true);
  for (const auto& m : addon.merges()) {
    MergeRule r{remap[m.left], remap[m.right], remap[m.out]};
    if (seen.emplace(pair_key(r.left, r.right), true).second) merges.push_back(r);
  }

  Vocab vocab = Vocab::create(std::move(tokens), std::move(merges), std::move(specials));
  VocabOverlap overlap = compute_overlap(base, vocab);
  return {std::move(vocab), std::move(overlap)};
}

double compression_rate(const Vocab& vocab, const Corpus& corpus) {
  std::int64_t chars = 0;
  std::int64_t tokens = 0;
  for (const auto& doc : corpus) {
    auto result = encode(vocab, doc);
    chars += result.text_len;
    tokens += static_cast<std::int64_t>(result.ids.size());
  }
  if (tokens == 0) throw Error("empty corpus");
  return static_cast<double>(chars) / static_cast<double>(tokens);
}

// ---------------------------------------------------------------------------
// Serialization

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                            (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                            static_cast<unsigned char>(bytes[i + 2]);
    out += kBase64Alphabet[(v >> 18) & 63];
    out += kBase64Alphabet[(v >> 12) & 63];
    out += kBase64Alphabet[(v >> 6) & 63];
    out += kBase64Alphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
    if (rest == 2) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kBase64Alphabet[(v >> 18) & 63];
    out += kBase64Alphabet[(v >> 12) & 63];
    out += rest == 2 ? kBase64Alphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw Error("invalid base64 length");
  std::string out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = value(c);
      if (d < 0 || pad > 0) throw Error("invalid base64 character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out += static_cast<char>((v >> 16) & 0xff);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xff);
    if (pad < 1) out += static_cast<char>(v & 0xff);
  }
  return out;
}

std::string vocab_to_json(const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["byte_fallback"] = true;
  j["offsets"] = "utf8-chars";
  auto& tokens = j["tokens"] = nlohmann::ordered_json::array();
  for (const auto& t : vocab.tokens()) tokens.push_back(base64_encode(t));
  auto& merges = j["merges"] = nlohmann::ordered_json::array();
  for (const auto& m : vocab.merges()) merges.push_back({m.left, m.right, m.out});
  auto& specials = j["specials"] = nlohmann::ordered_json::object();
  for (const auto& [name, id] : vocab.specials()) specials[name] = id;
  return j.dump(1);
}

Vocab vocab_from_json(std::string_view json_text) {
  try {
    auto j = nlohmann::json::parse(json_text);
    if (j.at("version").get<int>() != 1) throw Error("unsupported vocab version");
    std::vector<std::string> tokens;
    for (const auto& t : j.at("tokens")) tokens.push_back(base64_decode(t.get<std::string>()));
    std::vector<MergeRule> merges;
    for (const auto& m : j.at("merges")) {
      if (m.size() != 3) throw Error("merge rule must have three ids");
      merges.push_back({m[0].get<TokenId>(), m[1].get<TokenId>(), m[2].get<TokenId>()});
    }
    std::map<std::string, TokenId> specials;
    for (const auto& [name, id] : j.at("specials").items()) specials.emplace(name, id.get<TokenId>());
    return Vocab::create(std::move(tokens), std::move(merges), std::move(specials));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed vocab: ") + e.what());
  }
}

void save_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << vocab_to_json(vocab) << '\n';
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open vocab " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return vocab_from_json(buffer.str());
}

}  // namespace mattforge
