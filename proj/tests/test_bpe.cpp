#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "newscap/bpe.hpp"
#include "newscap/rng.hpp"

using namespace newscap;
namespace fs = std::filesystem;

namespace {

// Independent pair-counting oracle: most frequent adjacent byte pair over
// whitespace-attached segments, ties by byte order.
std::pair<std::string, std::string> brute_force_best_pair(const std::vector<std::string>& corpus) {
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  for (const std::string& text : corpus) {
    for (const std::string& seg : bpe::split_segments(text)) {
      for (std::size_t i = 0; i + 1 < seg.size(); ++i) {
        counts[{std::string(1, seg[i]), std::string(1, seg[i + 1])}] += 1;
      }
    }
  }
  std::pair<std::string, std::string> best;
  std::size_t best_count = 0;
  for (const auto& [pair, count] : counts) {
    if (count > best_count) {
      best = pair;
      best_count = count;
    }
  }
  return best;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
  return out;
}

std::string random_unicode_string(Rng& rng) {
  std::size_t len = rng.below(40);
  std::string out;
  for (std::size_t i = 0; i < len; ++i) {
    switch (rng.below(6)) {
      case 0: out.push_back(static_cast<char>('a' + rng.below(26))); break;
      case 1: out.push_back(' '); break;
      case 2: out += utf8_encode(static_cast<char32_t>(0xa1 + rng.below(0x500))); break;
      case 3: out += utf8_encode(static_cast<char32_t>(0x4e00 + rng.below(0x2000))); break;
      case 4: out += utf8_encode(static_cast<char32_t>(0x1f300 + rng.below(0x100))); break;
      default: out.push_back(static_cast<char>('0' + rng.below(10))); break;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("bpe: first merge from brute-force pair counting") {
  std::vector<std::string> corpus = {"aaab aaab"};
  bpe::BpeVocab vocab = bpe::train_merges(corpus, 260);
  REQUIRE(vocab.merges().size() == 1);
  CHECK(vocab.merges()[0].left == "a");
  CHECK(vocab.merges()[0].right == "a");
  auto oracle = brute_force_best_pair(corpus);
  CHECK(vocab.merges()[0].left == oracle.first);
  CHECK(vocab.merges()[0].right == oracle.second);

  std::vector<std::string> corpus2 = {"xy xy xy", "xz"};
  bpe::BpeVocab vocab2 = bpe::train_merges(corpus2, 260);
  REQUIRE(vocab2.merges().size() == 1);
  CHECK(vocab2.merges()[0].left == "x");
  CHECK(vocab2.merges()[0].right == "y");
  auto oracle2 = brute_force_best_pair(corpus2);
  CHECK(vocab2.merges()[0].left == oracle2.first);
  CHECK(vocab2.merges()[0].right == oracle2.second);
}

TEST_CASE("bpe: training stops when no pair repeats") {
  bpe::BpeVocab vocab = bpe::train_merges({"ab"}, 1000000);
  CHECK(vocab.size() == bpe::kBaseVocab + vocab.merges().size());
  CHECK(vocab.merges().empty());  // "ab" has a single pair occurring once

  CHECK_THROWS_AS(bpe::train_merges({}, 300), DomainError);
  CHECK_THROWS_AS(bpe::train_merges({"abc"}, 100), DomainError);
}

TEST_CASE("bpe: vocabulary invariants") {
  bpe::BpeVocab vocab = bpe::train_merges({"the cat the mat the hat bat the"}, 280);
  CHECK(vocab.size() == bpe::kBaseVocab + vocab.merges().size());
  // token/id maps are inverses over all byte and merged tokens
  for (int id = 3; id < static_cast<int>(vocab.size()); ++id) {
    const std::string& tok = vocab.id_to_token(id);
    CHECK(vocab.token_to_id(tok) == id);
  }
  CHECK_THROWS_AS(vocab.id_to_token(static_cast<int>(vocab.size())), DomainError);
  CHECK_THROWS_AS(vocab.id_to_token(-1), DomainError);
}

TEST_CASE("bpe: encode/decode basics") {
  bpe::BpeVocab vocab = bpe::train_merges({"hello hello world"}, 270);
  CHECK(bpe::encode("", vocab).empty());
  CHECK(bpe::decode({}, vocab).empty());

  std::vector<int> hi = {bpe::kBosId, vocab.token_to_id("h"), vocab.token_to_id("i"),
                         bpe::kEosId};
  CHECK(bpe::decode(hi, vocab) == "hi");

  CHECK_THROWS_AS(bpe::decode({99999}, vocab), DomainError);

  // Unseen words split into multiple known subword tokens, never unknowns.
  std::vector<int> ids = bpe::encode("Varshini", vocab);
  CHECK(ids.size() > 1);
  for (int id : ids) CHECK_NOTHROW(vocab.id_to_token(id));
  CHECK(bpe::decode(ids, vocab) == "Varshini");
}

TEST_CASE("bpe: encoding is prefix-stable per word") {
  bpe::BpeVocab vocab = bpe::train_merges({"river rising river rising riverbed"}, 290);
  std::vector<int> alone = bpe::encode(" river", vocab);
  std::vector<int> with_neighbors = bpe::encode("x river y", vocab);
  // the " river" segment encodes identically regardless of neighbors
  std::vector<int> x = bpe::encode("x", vocab);
  std::vector<int> mid(with_neighbors.begin() + static_cast<std::ptrdiff_t>(x.size()),
                       with_neighbors.end() - 2);  // " y" is two byte tokens
  CHECK(mid == alone);
}

TEST_CASE("bpe: round-trip fuzz") {
  bpe::BpeVocab vocab =
      bpe::train_merges({"some common text with words words and bytes bytes"}, 300);
  Rng rng(2024);
  for (int i = 0; i < 2000; ++i) {
    std::string s = random_unicode_string(rng);
    CHECK(bpe::decode(bpe::encode(s, vocab), vocab) == s);
  }
  // whitespace-only and mixed-whitespace round trips
  for (const char* s : {" ", "  ", "a  b", "\tx", "x\n", " \t\n mixed \r\f"}) {
    CHECK(bpe::decode(bpe::encode(s, vocab), vocab) == s);
  }
}

TEST_CASE("bpe: deterministic training and file round-trip") {
  std::vector<std::string> corpus = {"pack my box with five dozen liquor jugs",
                                     "pack my box again and again", "five jugs of liquor"};
  bpe::BpeVocab a = bpe::train_merges(corpus, 300);
  bpe::BpeVocab b = bpe::train_merges(corpus, 300);
  CHECK(a == b);

  fs::path dir = fs::temp_directory_path() / "newscap_bpe_test";
  fs::create_directories(dir);
  std::string path = (dir / "vocab.bpe").string();
  bpe::save_vocab(a, path);
  bpe::BpeVocab loaded = bpe::load_vocab(path);
  CHECK(loaded == a);
  CHECK(bpe::encode("pack my box", loaded) == bpe::encode("pack my box", a));

  // identical bytes across two saves
  std::string path2 = (dir / "vocab2.bpe").string();
  bpe::save_vocab(b, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
}

TEST_CASE("bpe: escaped tokens survive odd bytes") {
  // Merges over whitespace-prefixed segments put raw spaces and control
  // bytes inside tokens; the file format must escape them.
  std::vector<std::string> corpus = {"aa aa aa aa \x01\x01 \x01\x01"};
  bpe::BpeVocab vocab = bpe::train_merges(corpus, 270);
  fs::path dir = fs::temp_directory_path() / "newscap_bpe_test";
  fs::create_directories(dir);
  std::string path = (dir / "escaped.bpe").string();
  bpe::save_vocab(vocab, path);
  CHECK(bpe::load_vocab(path) == vocab);

  CHECK(bpe::unescape_token(bpe::escape_token(" a\\b\nc")) == " a\\b\nc");
  CHECK_THROWS_AS(bpe::unescape_token("\\q"), ParseError);
}

TEST_CASE("bpe: malformed vocab files") {
  fs::path dir = fs::temp_directory_path() / "newscap_bpe_test";
  fs::create_directories(dir);
  auto write = [&dir](const char* name, const std::string& content) {
    std::string path = (dir / name).string();
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path;
  };
  CHECK_THROWS_AS(bpe::load_vocab((dir / "missing.bpe").string()), ParseError);
  CHECK_THROWS_AS(bpe::load_vocab(write("bad_header.bpe", "NOPE 3\n")), ParseError);
  CHECK_THROWS_AS(bpe::load_vocab(write("truncated.bpe", "BPE1 2\na b\n")), ParseError);
  CHECK_THROWS_AS(bpe::load_vocab(write("three_fields.bpe", "BPE1 1\na b c\n")), ParseError);
  // merge referencing a token that does not exist yet
  CHECK_THROWS_AS(bpe::load_vocab(write("bad_ref.bpe", "BPE1 1\nab c\n")), ValidationError);
}
