#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "newscap/errors.hpp"

namespace newscap {
namespace bpe {

/// Reserved token ids. All 256 single bytes follow at ids 3..258; merged
/// tokens are appended in merge-rank order, so the vocabulary size is
/// 259 + number of merges.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr std::size_t kBaseVocab = 259;

/// One merge: replace every adjacent (left, right) token pair with the
/// concatenated token. rank is the application priority (lower first);
/// ranks are unique and contiguous from 0.
struct MergeRule {
  std::string left;
  std::string right;
  std::uint32_t rank = 0;

  bool operator==(const MergeRule&) const = default;
};

/// Byte-level vocabulary with an ordered merge table. Immutable after
/// training/loading; encode/decode are safe to call concurrently.
class BpeVocab {
 public:
  BpeVocab();  // specials + 256 byte tokens, no merges
  explicit BpeVocab(std::vector<MergeRule> merges);

  std::size_t size() const { return kBaseVocab + merges_.size(); }
  const std::vector<MergeRule>& merges() const { return merges_; }

  /// -1 when the byte string is not a token.
  int token_to_id(const std::string& token) const;
  /// Throws DomainError for unknown ids; specials map to empty bytes.
  const std::string& id_to_token(int id) const;

  /// Rank of a merge for the given adjacent pair, or -1 if never merged.
  std::int64_t pair_rank(const std::string& left, const std::string& right) const;

  bool operator==(const BpeVocab&) const;

 private:
  std::vector<MergeRule> merges_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::unordered_map<std::string, std::int64_t> pair_rank_;
};

/// Greedy merge training. Splits text into segments (a maximal run of
/// whitespace attaches as a prefix to the following word; a trailing run
/// with no word forms its own segment), counts adjacent token pairs across
/// segments, and repeatedly merges the most frequent pair until the target
/// vocabulary size is reached or no pair occurs at least twice. Ties break
/// lexicographically on the left then right token bytes. Merges never cross
/// segment boundaries. Deterministic.
BpeVocab train_merges(const std::vector<std::string>& corpus, std::size_t target_vocab_size);

/// Deterministic open-vocabulary encoding; any Unicode string round-trips.
std::vector<int> encode(const std::string& text, const BpeVocab& vocab);

/// Inverse of encode. Skips PAD/BOS/EOS; invalid UTF-8 byte runs decode with
/// U+FFFD replacement. Unknown ids raise DomainError naming the id.
std::string decode(const std::vector<int>& ids, const BpeVocab& vocab);

/// Segment splitter used by the trainer and encoder; exposed for tests.
std::vector<std::string> split_segments(const std::string& text);

/// Token sequence for one segment after all applicable merges.
std::vector<std::string> encode_segment(const std::string& segment, const BpeVocab& vocab);

/// BPE1 vocabulary file: header line "BPE1 <n_merges>", then one merge per
/// line as two space-separated byte-escaped tokens.
void save_vocab(const BpeVocab& vocab, const std::string& path);
BpeVocab load_vocab(const std::string& path);

std::string escape_token(const std::string& token);
std::string unescape_token(const std::string& text);

}  // namespace bpe
}  // namespace newscap
