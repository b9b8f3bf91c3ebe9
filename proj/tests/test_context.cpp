#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "newscap/context.hpp"

using namespace newscap;
namespace fs = std::filesystem;

namespace {

ContextSpec tiny_spec() {
  ContextSpec s;
  s.d_image = 6;
  s.m_image = 4;
  s.d_face = 5;
  s.max_faces = 4;
  s.d_object = 7;
  s.max_objects = 8;
  s.d_article = 6;
  s.n_layers = 3;
  return s;
}

}  // namespace

TEST_CASE("synth_context: determinism and caps") {
  ContextSpec spec = tiny_spec();
  ContextBundle a = synth_context(0, spec, 2, 3, 10);
  ContextBundle b = synth_context(0, spec, 2, 3, 10);
  CHECK(a.image.data() == b.image.data());
  CHECK(a.faces.data() == b.faces.data());
  CHECK(a.article_layers[2].data() == b.article_layers[2].data());
  CHECK(a.article_token_ids == b.article_token_ids);

  ContextBundle c = synth_context(1, spec, 2, 3, 10);
  CHECK(a.image.data() != c.image.data());

  ContextBundle no_faces = synth_context(0, spec, 0, 3, 10);
  CHECK(no_faces.faces.rows() == 0);

  CHECK_THROWS_AS(synth_context(0, spec, 5, 0, 10), DomainError);
  CHECK_THROWS_AS(synth_context(0, spec, 0, 9, 10), DomainError);
}

TEST_CASE("mix_article_layers: analytic weights") {
  ContextSpec spec = tiny_spec();
  ContextBundle bundle = synth_context(7, spec, 1, 1, 5);

  // Saturated softmax picks out layer 0.
  {
    Tape tape;
    Var logits = tape.leaf(Tensor::vector({30.0, 0.0, 0.0}));
    Tensor mixed = tape.value(mix_article_layers(tape, bundle, logits));
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      CHECK(mixed[i] == doctest::Approx(bundle.article_layers[0].data()[i]).epsilon(1e-6));
    }
  }
  // Equal logits average the layers (two-layer bundle).
  {
    ContextSpec two = spec;
    two.n_layers = 2;
    ContextBundle b2 = synth_context(9, two, 0, 0, 4);
    Tape tape;
    Var logits = tape.leaf(Tensor::vector({1.5, 1.5}));
    Tensor mixed = tape.value(mix_article_layers(tape, b2, logits));
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      double mean = 0.5 * (b2.article_layers[0].data()[i] + b2.article_layers[1].data()[i]);
      CHECK(mixed[i] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  // Logits [0, ln2, ln3] give exact convex weights 1/6, 2/6, 3/6.
  {
    Tape tape;
    Var logits = tape.leaf(Tensor::vector({0.0, std::log(2.0), std::log(3.0)}));
    Tensor mixed = tape.value(mix_article_layers(tape, bundle, logits));
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      double want = (1.0 * bundle.article_layers[0].data()[i] +
                     2.0 * bundle.article_layers[1].data()[i] +
                     3.0 * bundle.article_layers[2].data()[i]) /
                    6.0;
      CHECK(std::abs(mixed[i] - want) < 1e-9);
    }
  }
}

TEST_CASE("mix_article_layers: shift invariance and gradient flow") {
  ContextSpec spec = tiny_spec();
  ContextBundle bundle = synth_context(3, spec, 0, 0, 6);
  Tape t1, t2;
  Tensor base = Tensor::vector({0.3, -0.7, 1.1});
  Tensor shifted = Tensor::vector({0.3 + 5.0, -0.7 + 5.0, 1.1 + 5.0});
  Tensor m1 = t1.value(mix_article_layers(t1, bundle, t1.leaf(base)));
  Tensor m2 = t2.value(mix_article_layers(t2, bundle, t2.leaf(shifted)));
  for (std::size_t i = 0; i < m1.size(); ++i) CHECK(std::abs(m1[i] - m2[i]) < 1e-9);

  double err = grad_check(
      [&bundle](Tape& t, Var logits) {
        return t.sum(mix_article_layers(t, bundle, logits));
      },
      base);
  CHECK(err < 1e-6);

  Tape t3;
  CHECK_THROWS_AS(mix_article_layers(t3, bundle, t3.leaf(Tensor::vector({1.0, 2.0}))),
                  DimensionError);
}

TEST_CASE("ctx file: round-trip") {
  ContextSpec spec = tiny_spec();
  ContextBundle bundle = synth_context(11, spec, 2, 0, 8);
  fs::path dir = fs::temp_directory_path() / "newscap_ctx_test";
  fs::create_directories(dir);
  std::string path = (dir / "a.ctx1").string();
  save_context(bundle, path);
  ContextBundle loaded = load_context(path, spec);
  CHECK(loaded.article_token_ids == bundle.article_token_ids);
  CHECK(loaded.faces.rows() == 2);
  CHECK(loaded.objects.rows() == 0);

  // A second write of the loaded bundle is byte-identical (f32 payloads are
  // already exactly representable after one round trip).
  std::string path2 = (dir / "b.ctx1").string();
  save_context(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
}

TEST_CASE("ctx file: parse errors carry offsets") {
  ContextSpec spec = tiny_spec();
  ContextBundle bundle = synth_context(13, spec, 1, 1, 8);
  fs::path dir = fs::temp_directory_path() / "newscap_ctx_test";
  fs::create_directories(dir);
  std::string good = (dir / "good.ctx1").string();
  save_context(bundle, good);

  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto write_bytes = [&dir](const char* name, const std::string& content) {
    std::string path = (dir / name).string();
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path;
  };

  // Bad magic.
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::string path = write_bytes("bad_magic.ctx1", bad);
    CHECK_THROWS_WITH_AS(load_context(path, spec), doctest::Contains("bad magic at byte 0"),
                         ParseError);
  }
  // Truncation inside the payload reports the cut offset.
  {
    std::string cut = bytes.substr(0, bytes.size() - 7);
    std::string path = write_bytes("cut.ctx1", cut);
    try {
      load_context(path, spec);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      std::string msg = e.what();
      CHECK(msg.find("truncated") != std::string::npos);
      CHECK(msg.find(std::to_string(cut.size() - ((cut.size() - 4) % 4))) != std::string::npos);
    }
  }
  // Trailing garbage is rejected too.
  {
    std::string padded = bytes + "zzzz";
    std::string path = write_bytes("padded.ctx1", padded);
    CHECK_THROWS_AS(load_context(path, spec), ParseError);
  }
  // Every proper prefix of the file is rejected, whatever the cut point.
  {
    for (std::size_t cut = 0; cut < bytes.size(); cut += 13) {
      std::string path = write_bytes("sweep.ctx1", bytes.substr(0, cut));
      CHECK_THROWS_AS(load_context(path, spec), ParseError);
    }
  }
  // Face count above the cap violates the shape contract.
  {
    ContextSpec strict = spec;
    strict.max_faces = 0;
    CHECK_THROWS_AS(load_context(good, strict), ValidationError);
  }
  // Dim mismatch against the spec.
  {
    ContextSpec other = spec;
    other.d_image = spec.d_image + 1;
    CHECK_THROWS_AS(load_context(good, other), ValidationError);
  }
}
