#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "newscap/dataset.hpp"
#include "newscap/rng.hpp"

using namespace newscap;
namespace fs = std::filesystem;

namespace {

NewsExample sample_example(std::size_t i) {
  NewsExample e;
  e.id = "ex" + std::to_string(i);
  e.article_text = "the council met on tuesday to debate the budget";
  e.caption_text = "Morgan Avery speaks at the council meeting";
  e.image_position = static_cast<std::int64_t>(i % 5) - 1;
  e.context_path = "ctx/ex" + std::to_string(i) + ".ctx1";
  e.entities = {{"Morgan Avery", EntityLabel::person}, {"council", EntityLabel::org}};
  e.split = i % 3 == 0 ? Split::train : (i % 3 == 1 ? Split::valid : Split::test);
  e.date = "2020-03-" + std::string(i % 9 + 1 < 10 ? "0" : "") + std::to_string(i % 9 + 1);
  return e;
}

}  // namespace

TEST_CASE("select_context_window: spec geometry") {
  WindowMode first{WindowMode::Mode::first, 512};
  WindowMode surrounding{WindowMode::Mode::surrounding, 512};

  CHECK(select_context_window(1000, -1, first) == std::pair<std::size_t, std::size_t>{0, 512});
  CHECK(select_context_window(1000, 600, surrounding) ==
        std::pair<std::size_t, std::size_t>{344, 856});
  CHECK(select_context_window(1000, 100, surrounding) ==
        std::pair<std::size_t, std::size_t>{0, 512});
  // clamped at the back, re-extended to full width
  CHECK(select_context_window(1000, 950, surrounding) ==
        std::pair<std::size_t, std::size_t>{488, 1000});
  // unknown image position falls back to the first tokens
  CHECK(select_context_window(1000, -1, surrounding) ==
        std::pair<std::size_t, std::size_t>{0, 512});
  // short articles return everything in both modes
  CHECK(select_context_window(300, 250, surrounding) ==
        std::pair<std::size_t, std::size_t>{0, 300});
  CHECK(select_context_window(300, -1, first) == std::pair<std::size_t, std::size_t>{0, 300});
}

TEST_CASE("select_context_window: length law over random cases") {
  Rng rng(404);
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t n = 1 + rng.below(800);
    std::size_t width = 1 + rng.below(600);
    std::int64_t p = static_cast<std::int64_t>(rng.below(n + 1)) - 1;
    for (auto mode : {WindowMode::Mode::first, WindowMode::Mode::surrounding}) {
      auto [begin, end] = select_context_window(n, p, WindowMode{mode, width});
      CHECK(end - begin == std::min(width, n));
      CHECK(end <= n);
    }
  }
}

TEST_CASE("jsonl: round-trip of synthetic examples") {
  fs::path dir = fs::temp_directory_path() / "newscap_dataset_test";
  fs::create_directories(dir);
  std::vector<NewsExample> examples;
  for (std::size_t i = 0; i < 100; ++i) examples.push_back(sample_example(i));
  std::string path = (dir / "data.jsonl").string();
  save_jsonl(examples, path);
  std::vector<NewsExample> loaded = load_jsonl(path);
  REQUIRE(loaded.size() == examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) CHECK(loaded[i] == examples[i]);

  std::ofstream empty_file(dir / "empty.jsonl");
  empty_file.close();
  CHECK(load_jsonl((dir / "empty.jsonl").string()).empty());
}

TEST_CASE("jsonl: malformed lines and invariant violations") {
  fs::path dir = fs::temp_directory_path() / "newscap_dataset_test";
  fs::create_directories(dir);
  auto write = [&dir](const char* name, const std::string& content) {
    std::string path = (dir / name).string();
    std::ofstream out(path);
    out << content;
    return path;
  };
  // malformed JSON reports the line number
  try {
    load_jsonl(write("broken.jsonl",
                     R"({"id":"a","article":"x","caption":"c","image_position":-1,"context":"p","entities":[],"split":"train"})"
                     "\nnot json\n"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  // missing caption names the field
  try {
    load_jsonl(write("missing.jsonl",
                     R"({"id":"a","article":"x","image_position":-1,"context":"p","entities":[],"split":"train"})"
                     "\n"));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("caption") != std::string::npos);
  }
  // empty caption
  CHECK_THROWS_AS(
      load_jsonl(write("empty_caption.jsonl",
                       R"({"id":"a","article":"x","caption":"","image_position":-1,"context":"p","entities":[],"split":"train"})"
                       "\n")),
      ValidationError);
  // entity not present verbatim in the caption
  CHECK_THROWS_AS(
      load_jsonl(write(
          "bad_entity.jsonl",
          R"({"id":"a","article":"x","caption":"a short caption","image_position":-1,"context":"p","entities":[{"surface":"Morgan","label":"PERSON"}],"split":"train"})"
          "\n")),
      ValidationError);
  // unknown field rejected
  CHECK_THROWS_AS(
      load_jsonl(write(
          "unknown.jsonl",
          R"({"id":"a","article":"x","caption":"c","image_position":-1,"context":"p","entities":[],"split":"train","bogus":1})"
          "\n")),
      ValidationError);
  // unknown label / split
  CHECK_THROWS_AS(
      load_jsonl(write(
          "bad_label.jsonl",
          R"({"id":"a","article":"x","caption":"c X","image_position":-1,"context":"p","entities":[{"surface":"X","label":"WHAT"}],"split":"train"})"
          "\n")),
      ValidationError);
  CHECK_THROWS_AS(
      load_jsonl(write("bad_split.jsonl",
                       R"({"id":"a","article":"x","caption":"c","image_position":-1,"context":"p","entities":[],"split":"later"})"
                       "\n")),
      ValidationError);
}

TEST_CASE("split manifest: resolution and temporal ordering") {
  fs::path dir = fs::temp_directory_path() / "newscap_dataset_test";
  fs::create_directories(dir);

  std::vector<NewsExample> examples;
  for (std::size_t i = 0; i < 6; ++i) {
    NewsExample e = sample_example(i);
    e.id = "id" + std::to_string(i);
    e.date = "2021-0" + std::to_string(i + 1) + "-15";
    examples.push_back(e);
  }
  SplitManifest m;
  m.train = {"id0", "id1", "id2"};
  m.valid = {"id3"};
  m.test = {"id4", "id5"};
  m.temporal = true;
  CHECK_NOTHROW(validate_split(m, examples));

  std::string path = (dir / "split.json").string();
  save_split_manifest(m, path);
  SplitManifest loaded = load_split_manifest(path);
  CHECK(loaded.train == m.train);
  CHECK(loaded.valid == m.valid);
  CHECK(loaded.test == m.test);
  CHECK(loaded.temporal);

  SplitManifest unknown = m;
  unknown.test.push_back("nope");
  CHECK_THROWS_AS(validate_split(unknown, examples), ValidationError);

  // violate the temporal ordering: a train example after the test dates
  std::vector<NewsExample> late = examples;
  late[0].date = "2022-01-01";
  CHECK_THROWS_AS(validate_split(m, late), ValidationError);

  SplitManifest untimed = m;
  untimed.temporal = false;
  CHECK_NOTHROW(validate_split(untimed, late));
}
