#include "newscap/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace newscap {
namespace bpe {

namespace {

bool is_ws(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string pair_key(const std::string& left, const std::string& right) {
  std::string key;
  key.reserve(left.size() + right.size() + 4);
  std::uint32_t n = static_cast<std::uint32_t>(left.size());
  for (int i = 0; i < 4; ++i) key.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  key += left;
  key += right;
  return key;
}

// Appends the UTF-8 replacement character.
void append_replacement(std::string& out) { out += "\xef\xbf\xbd"; }

// Length of a valid UTF-8 sequence starting at s[i], or 0 if malformed.
std::size_t utf8_sequence_length(const std::string& s, std::size_t i) {
  unsigned char b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xc0) == 0x80;
  };
  if (b0 < 0x80) return 1;
  if (b0 >= 0xc2 && b0 <= 0xdf) return cont(1) ? 2 : 0;
  if (b0 == 0xe0) {
    if (i + 1 < s.size()) {
      unsigned char b1 = static_cast<unsigned char>(s[i + 1]);
      if (b1 >= 0xa0 && b1 <= 0xbf && cont(2)) return 3;
    }
    return 0;
  }
  if (b0 >= 0xe1 && b0 <= 0xec) return cont(1) && cont(2) ? 3 : 0;
  if (b0 == 0xed) {
    if (i + 1 < s.size()) {
      unsigned char b1 = static_cast<unsigned char>(s[i + 1]);
      if (b1 >= 0x80 && b1 <= 0x9f && cont(2)) return 3;
    }
    return 0;
  }
  if (b0 >= 0xee && b0 <= 0xef) return cont(1) && cont(2) ? 3 : 0;
  if (b0 == 0xf0) {
    if (i + 1 < s.size()) {
      unsigned char b1 = static_cast<unsigned char>(s[i + 1]);
      if (b1 >= 0x90 && b1 <= 0xbf && cont(2) && cont(3)) return 4;
    }
    return 0;
  }
  if (b0 >= 0xf1 && b0 <= 0xf3) return cont(1) && cont(2) && cont(3) ? 4 : 0;
  if (b0 == 0xf4) {
    if (i + 1 < s.size()) {
      unsigned char b1 = static_cast<unsigned char>(s[i + 1]);
      if (b1 >= 0x80 && b1 <= 0x8f && cont(2) && cont(3)) return 4;
    }
    return 0;
  }
  return 0;
}

std::string sanitize_utf8(const std::string& bytes) {
  std::string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    std::size_t len = utf8_sequence_length(bytes, i);
    if (len == 0) {
      append_replacement(out);
      ++i;
    } else {
      out.append(bytes, i, len);
      i += len;
    }
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

BpeVocab::BpeVocab() : BpeVocab(std::vector<MergeRule>{}) {}

BpeVocab::BpeVocab(std::vector<MergeRule> merges) : merges_(std::move(merges)) {
  id_to_token_.reserve(kBaseVocab + merges_.size());
  id_to_token_.push_back("");  // PAD
  id_to_token_.push_back("");  // BOS
  id_to_token_.push_back("");  // EOS
  for (int b = 0; b < 256; ++b) {
    std::string tok(1, static_cast<char>(b));
    token_to_id_[tok] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(std::move(tok));
  }
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    MergeRule& rule = merges_[i];
    rule.rank = static_cast<std::uint32_t>(i);
    if (token_to_id_.find(rule.left) == token_to_id_.end() ||
        token_to_id_.find(rule.right) == token_to_id_.end()) {
      throw ValidationError("bpe: merge " + std::to_string(i) +
                            " references a token that does not exist yet");
    }
    std::string merged = rule.left + rule.right;
    if (token_to_id_.find(merged) != token_to_id_.end()) {
      throw ValidationError("bpe: merge " + std::to_string(i) + " produces a duplicate token");
    }
    pair_rank_[pair_key(rule.left, rule.right)] = static_cast<std::int64_t>(i);
    token_to_id_[merged] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(std::move(merged));
  }
}

int BpeVocab::token_to_id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& BpeVocab::id_to_token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw DomainError("bpe: unknown token id " + std::to_string(id));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::int64_t BpeVocab::pair_rank(const std::string& left, const std::string& right) const {
  auto it = pair_rank_.find(pair_key(left, right));
  return it == pair_rank_.end() ? -1 : it->second;
}

bool BpeVocab::operator==(const BpeVocab& other) const { return merges_ == other.merges_; }

std::vector<std::string> split_segments(const std::string& text) {
  std::vector<std::string> segments;
  std::size_t i = 0, n = text.size();
  while (i < n) {
    std::size_t start = i;
    while (i < n && is_ws(static_cast<unsigned char>(text[i]))) ++i;
    while (i < n && !is_ws(static_cast<unsigned char>(text[i]))) ++i;
    segments.push_back(text.substr(start, i - start));
  }
  return segments;
}

BpeVocab train_merges(const std::vector<std::string>& corpus, std::size_t target_vocab_size) {
  if (corpus.empty()) throw DomainError("bpe train: empty corpus");
  if (target_vocab_size < kBaseVocab) {
    throw DomainError("bpe train: target vocabulary size " + std::to_string(target_vocab_size) +
                      " below minimum " + std::to_string(kBaseVocab));
  }

  // Unique segment -> corpus frequency; each segment is a token sequence.
  std::map<std::string, std::uint64_t> segment_freq;
  for (const std::string& text : corpus) {
    for (std::string& seg : split_segments(text)) segment_freq[std::move(seg)] += 1;
  }
  struct Entry {
    std::vector<std::string> tokens;
    std::uint64_t freq;
  };
  std::vector<Entry> entries;
  entries.reserve(segment_freq.size());
  for (const auto& [seg, freq] : segment_freq) {
    Entry e;
    e.freq = freq;
    e.tokens.reserve(seg.size());
    for (char c : seg) e.tokens.emplace_back(1, c);
    entries.push_back(std::move(e));
  }

  std::vector<MergeRule> merges;
  std::map<std::string, bool> token_exists;  // merged-token dedup
  while (kBaseVocab + merges.size() < target_vocab_size) {
    // Count every adjacent pair occurrence, weighted by segment frequency.
    std::map<std::pair<std::string, std::string>, std::uint64_t> counts;
    for (const Entry& e : entries) {
      for (std::size_t i = 0; i + 1 < e.tokens.size(); ++i) {
        counts[{e.tokens[i], e.tokens[i + 1]}] += e.freq;
      }
    }
    // Best pair: max count, ties by byte-lexicographic (left, right). A pair
    // whose concatenation is already a token is skipped so ids stay unique.
    const std::pair<std::string, std::string>* best = nullptr;
    std::uint64_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count < 2) continue;
      if (token_exists.count(pair.first + pair.second)) continue;
      if (best == nullptr || count > best_count || (count == best_count && pair < *best)) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr) break;

    const std::string left = best->first;
    const std::string right = best->second;
    const std::string merged = left + right;
    token_exists[merged] = true;
    merges.push_back(MergeRule{left, right, static_cast<std::uint32_t>(merges.size())});

    // Rewrite all segments, merging occurrences left to right.
    for (Entry& e : entries) {
      std::vector<std::string>& toks = e.tokens;
      std::size_t w = 0;
      for (std::size_t r = 0; r < toks.size();) {
        if (r + 1 < toks.size() && toks[r] == left && toks[r + 1] == right) {
          toks[w++] = merged;
          r += 2;
        } else {
          if (w != r) toks[w] = std::move(toks[r]);
          ++w;
          ++r;
        }
      }
      toks.resize(w);
    }
  }
  return BpeVocab(std::move(merges));
}

std::vector<std::string> encode_segment(const std::string& segment, const BpeVocab& vocab) {
  std::vector<std::string> toks;
  toks.reserve(segment.size());
  for (char c : segment) toks.emplace_back(1, c);
  while (toks.size() > 1) {
    // Lowest-rank applicable merge.
    std::int64_t best_rank = -1;
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
      std::int64_t r = vocab.pair_rank(toks[i], toks[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
    }
    if (best_rank < 0) break;
    const MergeRule& rule = vocab.merges()[static_cast<std::size_t>(best_rank)];
    const std::string merged = rule.left + rule.right;
    std::size_t w = 0;
    for (std::size_t r = 0; r < toks.size();) {
      if (r + 1 < toks.size() && toks[r] == rule.left && toks[r + 1] == rule.right) {
        toks[w++] = merged;
        r += 2;
      } else {
        if (w != r) toks[w] = std::move(toks[r]);
        ++w;
        ++r;
      }
    }
    toks.resize(w);
  }
  return toks;
}

std::vector<int> encode(const std::string& text, const BpeVocab& vocab) {
  std::vector<int> ids;
  for (const std::string& seg : split_segments(text)) {
    for (const std::string& tok : encode_segment(seg, vocab)) {
      int id = vocab.token_to_id(tok);
      if (id < 0) throw ContractError("bpe encode: produced unknown token");
      ids.push_back(id);
    }
  }
  return ids;
}

std::string decode(const std::vector<int>& ids, const BpeVocab& vocab) {
  std::string bytes;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    bytes += vocab.id_to_token(id);
  }
  return sanitize_utf8(bytes);
}

std::string escape_token(const std::string& token) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (char c : token) {
    unsigned char b = static_cast<unsigned char>(c);
    if (b == '\\') {
      out += "\\\\";
    } else if (b > 0x20 && b < 0x7f) {
      out.push_back(c);
    } else {
      out += "\\x";
      out.push_back(hex[b >> 4]);
      out.push_back(hex[b & 0xf]);
    }
  }
  return out;
}

std::string unescape_token(const std::string& text) {
  std::string out;
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] != '\\') {
      out.push_back(text[i++]);
      continue;
    }
    if (i + 1 < text.size() && text[i + 1] == '\\') {
      out.push_back('\\');
      i += 2;
      continue;
    }
    if (i + 3 < text.size() && text[i + 1] == 'x') {
      int hi = hex_value(text[i + 2]);
      int lo = hex_value(text[i + 3]);
      if (hi >= 0 && lo >= 0) {
        out.push_back(static_cast<char>((hi << 4) | lo));
        i += 4;
        continue;
      }
    }
    throw ParseError("bpe vocab: bad escape sequence at column " + std::to_string(i));
  }
  return out;
}

void save_vocab(const BpeVocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("bpe vocab: cannot open " + path + " for writing");
  out << "BPE1 " << vocab.merges().size() << "\n";
  for (const MergeRule& rule : vocab.merges()) {
    out << escape_token(rule.left) << " " << escape_token(rule.right) << "\n";
  }
  if (!out) throw ParseError("bpe vocab: write failed for " + path);
}

BpeVocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("bpe vocab: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("bpe vocab: missing header line");
  std::istringstream hs(header);
  std::string magic;
  std::size_t n_merges = 0;
  if (!(hs >> magic >> n_merges) || magic != "BPE1") {
    throw ParseError("bpe vocab: bad header line '" + header + "'");
  }
  std::vector<MergeRule> merges;
  merges.reserve(n_merges);
  std::string line;
  for (std::size_t i = 0; i < n_merges; ++i) {
    if (!std::getline(in, line)) {
      throw ParseError("bpe vocab: truncated at merge line " + std::to_string(i + 2));
    }
    std::size_t sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
      throw ParseError("bpe vocab: line " + std::to_string(i + 2) +
                       " must hold exactly two tokens");
    }
    merges.push_back(MergeRule{unescape_token(line.substr(0, sp)),
                               unescape_token(line.substr(sp + 1)),
                               static_cast<std::uint32_t>(i)});
  }
  return BpeVocab(std::move(merges));
}

}  // namespace bpe
}  // namespace newscap
