#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mattforge/corpus.hpp"
#include "mattforge/tensor.hpp"

namespace mattforge {

/// Half-open interval [start, end) of text positions.
struct Span {
  std::int64_t start = 0;
  std::int64_t end = 0;

  friend bool operator==(const Span&, const Span&) = default;
};

struct MergeRule {
  TokenId left = 0;
  TokenId right = 0;
  TokenId out = 0;

  friend bool operator==(const MergeRule&, const MergeRule&) = default;
};

/// Byte-level BPE vocabulary. Immutable once built; safe to share across
/// threads for concurrent encode/decode.
///
/// Invariants checked on construction: ids are dense, all 256 single-byte
/// tokens exist (byte fallback), every merge output equals the concatenation
/// of its inputs, specials never take part in merges, and a `bos` special
/// exists.
class Vocab {
 public:
  static constexpr bool kByteFallback = true;

  static Vocab create(std::vector<std::string> tokens, std::vector<MergeRule> merges,
                      std::map<std::string, TokenId> specials);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<MergeRule>& merges() const { return merges_; }
  const std::map<std::string, TokenId>& specials() const { return specials_; }

  TokenId bos() const { return bos_; }
  bool is_special(TokenId id) const;

  /// Looks up a regular (non-special) token by its bytes.
  std::optional<TokenId> find(std::string_view bytes) const;
  TokenId byte_token(unsigned char byte) const { return byte_ids_[byte]; }

  struct MergeEntry {
    std::uint32_t rank;
    TokenId out;
  };
  /// Merge rule for an adjacent pair, if any. Lower rank merges first.
  std::optional<MergeEntry> merge_of(TokenId left, TokenId right) const;

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.merges_ == b.merges_ && a.specials_ == b.specials_;
  }

 private:
  Vocab() = default;

  std::vector<std::string> tokens_;
  std::vector<MergeRule> merges_;
  std::map<std::string, TokenId> specials_;
  TokenId bos_ = -1;
  std::vector<bool> special_mask_;
  std::unordered_map<std::string, TokenId> by_bytes_;
  std::unordered_map<std::uint64_t, MergeEntry> merge_index_;
  TokenId byte_ids_[256] = {};
};

/// Token ids with character offsets.
///
/// Characters are UTF-8 code points (counted by lead bytes). A token's
/// character span covers every character whose lead byte lies inside the
/// token, so a byte-fallback token holding only continuation bytes of a
/// character reports an empty span at that character's end. Spans always tile
/// [0, text_len) contiguously. `byte_offsets` gives the exact byte intervals.
struct TokenizationResult {
  std::vector<TokenId> ids;
  std::vector<Span> offsets;
  std::vector<Span> byte_offsets;
  std::int64_t text_len = 0;
  std::int64_t byte_len = 0;
};

struct BpeOptions {
  /// Training stops once the most frequent pair occurs fewer times than this.
  std::int64_t min_pair_count = 2;
};

/// Trains a byte-level BPE vocabulary of `target_size` entries (fewer when the
/// corpus runs out of pairs). Layout: ids 0..255 are the raw bytes, followed
/// by the specials (`bos` is always included), followed by merged tokens in
/// selection order. Pair counts never cross document boundaries; equal counts
/// resolve to the lexicographically smaller (left bytes, right bytes) pair.
Vocab train_bpe(const Corpus& corpus, std::size_t target_size,
                std::vector<std::string> special_names = {"bos"}, const BpeOptions& options = {});

TokenizationResult encode(const Vocab& vocab, std::string_view text);

struct DecodeOptions {
  bool skip_specials = true;
};

std::string decode(const Vocab& vocab, std::span<const TokenId> ids, const DecodeOptions& options = {});

/// Which ids of an extended vocabulary already existed in the base vocabulary.
struct VocabOverlap {
  /// base_of[id] is the base id with identical bytes, or -1 for new tokens.
  std::vector<TokenId> base_of;
  /// Ids present only in the extended vocabulary, ascending.
  std::vector<TokenId> new_ids;

  bool is_shared(TokenId id) const { return base_of.at(static_cast<std::size_t>(id)) >= 0; }
  std::size_t shared_count() const { return base_of.size() - new_ids.size(); }
};

/// Matches regular tokens by bytes and specials by name.
VocabOverlap compute_overlap(const Vocab& base, const Vocab& extended);

struct VocabExtension {
  Vocab vocab;
  VocabOverlap overlap;
};

/// Appends the addon's unseen tokens to the base vocabulary. Base ids are kept;
/// merge rules are concatenated base first, dropping addon rules for pairs the
/// base already merges.
VocabExtension extend_vocab(const Vocab& base, const Vocab& addon);

/// Average number of characters per token over the corpus.
double compression_rate(const Vocab& vocab, const Corpus& corpus);

std::string vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(std::string_view json_text);
void save_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab load_vocab(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Number of UTF-8 code points (lead bytes) in `text`.
std::int64_t count_chars(std::string_view text);

}  // namespace mattforge
