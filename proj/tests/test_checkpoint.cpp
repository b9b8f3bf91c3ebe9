#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "newscap/checkpoint.hpp"
#include "newscap/generation.hpp"

using namespace newscap;
namespace fs = std::filesystem;

namespace {

CaptionModel make_model(std::uint64_t seed) {
  DecoderConfig config;
  config.d_model = 16;
  config.n_heads = 2;
  config.n_blocks = 2;
  config.kernel_sizes = {3, 5};
  config.attention_scaling = false;
  config.max_positions = 10;
  ContextSpec ctx;
  ctx.d_image = 8;
  ctx.m_image = 3;
  ctx.d_face = 8;
  ctx.max_faces = 2;
  ctx.d_object = 8;
  ctx.max_objects = 2;
  ctx.d_article = 8;
  ctx.n_layers = 2;
  return CaptionModel::init(config, ctx, ClusterSpec::with_cutoffs({20, 30}), 50, seed);
}

}  // namespace

TEST_CASE("checkpoint: config and parameters survive the round trip") {
  fs::path dir = fs::temp_directory_path() / "newscap_ckpt_test";
  fs::create_directories(dir);
  CaptionModel model = make_model(17);
  std::string path = (dir / "model.tnt").string();
  save_checkpoint(model, path);
  CaptionModel loaded = load_checkpoint(path);

  CHECK(loaded.config.d_model == model.config.d_model);
  CHECK(loaded.config.kernel_sizes == model.config.kernel_sizes);
  CHECK(loaded.config.attention_scaling == model.config.attention_scaling);
  CHECK(loaded.ctx_spec.m_image == model.ctx_spec.m_image);
  CHECK(loaded.clusters.cutoffs == model.clusters.cutoffs);
  CHECK(loaded.clusters.tail_divisors == model.clusters.tail_divisors);
  CHECK(loaded.vocab_size == model.vocab_size);

  // Parameters round-trip through f32; a second save is byte-identical.
  std::string path2 = (dir / "model2.tnt").string();
  save_checkpoint(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);

  // And the loaded model generates exactly like a reloaded copy.
  ContextBundle bundle = synth_context(3, model.ctx_spec, 1, 1, 5, model.vocab_size);
  bpe::BpeVocab vocab;
  GenConfig gc;
  gc.max_len = 5;
  CaptionModel reloaded = load_checkpoint(path2);
  GenResult a = generate_greedy(loaded, bundle, 0, bundle.article_len(), vocab, gc);
  GenResult b = generate_greedy(reloaded, bundle, 0, bundle.article_len(), vocab, gc);
  CHECK(a.hypothesis.ids == b.hypothesis.ids);
}

TEST_CASE("checkpoint: corruption reporting") {
  fs::path dir = fs::temp_directory_path() / "newscap_ckpt_test";
  fs::create_directories(dir);
  CaptionModel model = make_model(19);
  std::string path = (dir / "base.tnt").string();
  save_checkpoint(model, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto write_bytes = [&dir](const char* name, const std::string& content) {
    std::string p = (dir / name).string();
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  };
  {
    std::string bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(load_checkpoint(write_bytes("magic.tnt", bad)), ParseError);
  }
  {
    std::string cut = bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_WITH_AS(load_checkpoint(write_bytes("cut.tnt", cut)),
                         doctest::Contains("truncated"), ParseError);
  }
  // Prefix sweep: every truncation point must raise a parse error.
  for (std::size_t cut = 0; cut < bytes.size(); cut += bytes.size() / 37 + 1) {
    std::string path = write_bytes("sweep.tnt", bytes.substr(0, cut));
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "nope.tnt").string()), ParseError);
}
