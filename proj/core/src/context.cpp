#include "newscap/context.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "newscap/rng.hpp"

namespace newscap {

namespace {

using detail::BinaryReader;
using detail::BinaryWriter;

Tensor synth_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor m({rows, cols});
  double scale = cols > 0 ? 1.0 / std::sqrt(static_cast<double>(cols)) : 1.0;
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-1.0, 1.0) * scale;
  return m;
}

}  // namespace

ContextSpec ContextSpec::full_scale() {
  ContextSpec s;
  s.d_image = 2048;
  s.m_image = 49;
  s.d_face = 512;
  s.max_faces = 4;
  s.d_object = 2048;
  s.max_objects = 64;
  s.object_confidence_min = 0.3;
  s.d_article = 1024;
  s.n_layers = 25;
  return s;
}

void ContextSpec::validate() const {
  if (d_image < 1 || d_face < 1 || d_object < 1 || d_article < 1 || m_image < 1 || n_layers < 1) {
    throw ValidationError("context spec: dims, patch count, and layer count must be positive");
  }
  if (object_confidence_min < 0.0 || object_confidence_min > 1.0) {
    throw ValidationError("context spec: object_confidence_min must lie in [0, 1]");
  }
}

void ContextBundle::validate(const ContextSpec& spec) const {
  spec.validate();
  auto check_dims = [](const Tensor& t, std::size_t cols, const std::string& name) {
    if (t.rank() != 2 || t.cols() != cols) {
      throw ValidationError("context bundle: " + name + " has shape " + t.shape_str() +
                            ", expected columns " + std::to_string(cols));
    }
    t.ensure_finite("context bundle " + name);
  };
  check_dims(image, spec.d_image, "image");
  if (image.rows() != spec.m_image) {
    throw ValidationError("context bundle: image patch count " + std::to_string(image.rows()) +
                          " != m_image " + std::to_string(spec.m_image));
  }
  check_dims(faces, spec.d_face, "faces");
  if (faces.rows() > spec.max_faces) {
    throw ValidationError("context bundle: face count " + std::to_string(faces.rows()) +
                          " exceeds max_faces " + std::to_string(spec.max_faces));
  }
  check_dims(objects, spec.d_object, "objects");
  if (objects.rows() > spec.max_objects) {
    throw ValidationError("context bundle: object count " + std::to_string(objects.rows()) +
                          " exceeds max_objects " + std::to_string(spec.max_objects));
  }
  if (article_layers.size() != spec.n_layers) {
    throw ValidationError("context bundle: layer count " + std::to_string(article_layers.size()) +
                          " != n_layers " + std::to_string(spec.n_layers));
  }
  for (std::size_t l = 0; l < article_layers.size(); ++l) {
    check_dims(article_layers[l], spec.d_article, "article layer " + std::to_string(l));
    if (article_layers[l].rows() != article_len()) {
      throw ValidationError("context bundle: article layer " + std::to_string(l) +
                            " row count differs from layer 0");
    }
  }
  if (article_token_ids.size() != article_len()) {
    throw ValidationError("context bundle: article token id count " +
                          std::to_string(article_token_ids.size()) + " != article length " +
                          std::to_string(article_len()));
  }
}

LayerMixWeights LayerMixWeights::init(std::size_t n_layers) {
  LayerMixWeights w;
  w.logits = Tensor({n_layers});
  w.logits.set_requires_grad(true);
  return w;
}

Var mix_article_layers(Tape& tape, const ContextBundle& bundle, Var logits,
                       std::size_t row_begin, std::size_t row_end) {
  if (tape.value(logits).size() != bundle.article_layers.size()) {
    throw DimensionError("layer mix: " + std::to_string(tape.value(logits).size()) +
                         " weights for " + std::to_string(bundle.article_layers.size()) +
                         " layers");
  }
  if (row_begin > row_end || row_end > bundle.article_len()) {
    throw DimensionError("layer mix: window [" + std::to_string(row_begin) + ", " +
                         std::to_string(row_end) + ") out of article length " +
                         std::to_string(bundle.article_len()));
  }
  std::vector<Tensor> windowed;
  windowed.reserve(bundle.article_layers.size());
  std::size_t rows = row_end - row_begin;
  std::size_t cols = bundle.article_layers.empty() ? 0 : bundle.article_layers[0].cols();
  for (const Tensor& layer : bundle.article_layers) {
    Tensor w({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) w.at(r, c) = layer.at(row_begin + r, c);
    }
    windowed.push_back(std::move(w));
  }
  Var alpha = tape.softmax(logits);
  return tape.mix_layers(alpha, windowed);
}

Var mix_article_layers(Tape& tape, const ContextBundle& bundle, Var logits) {
  return mix_article_layers(tape, bundle, logits, 0, bundle.article_len());
}

ContextBundle synth_context(std::uint64_t seed, const ContextSpec& spec, std::size_t n_faces,
                            std::size_t n_objects, std::size_t article_len,
                            std::size_t vocab_size) {
  spec.validate();
  if (n_faces > spec.max_faces) {
    throw DomainError("synth context: " + std::to_string(n_faces) + " faces exceeds cap " +
                      std::to_string(spec.max_faces));
  }
  if (n_objects > spec.max_objects) {
    throw DomainError("synth context: " + std::to_string(n_objects) + " objects exceeds cap " +
                      std::to_string(spec.max_objects));
  }
  if (vocab_size == 0) throw DomainError("synth context: vocab_size must be positive");
  Rng rng(seed);
  ContextBundle b;
  b.image = synth_matrix(rng, spec.m_image, spec.d_image);
  b.faces = synth_matrix(rng, n_faces, spec.d_face);
  b.objects = synth_matrix(rng, n_objects, spec.d_object);
  b.article_layers.reserve(spec.n_layers);
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    b.article_layers.push_back(synth_matrix(rng, article_len, spec.d_article));
  }
  b.article_token_ids.reserve(article_len);
  for (std::size_t i = 0; i < article_len; ++i) {
    b.article_token_ids.push_back(static_cast<std::uint32_t>(rng.below(vocab_size)));
  }
  b.validate(spec);
  return b;
}

void save_context(const ContextBundle& bundle, const std::string& path) {
  BinaryWriter w(path);
  w.magic("CTX1");
  w.u32(static_cast<std::uint32_t>(bundle.image.rows()));
  w.u32(static_cast<std::uint32_t>(bundle.image.cols()));
  w.u32(static_cast<std::uint32_t>(bundle.faces.rows()));
  w.u32(static_cast<std::uint32_t>(bundle.faces.cols()));
  w.u32(static_cast<std::uint32_t>(bundle.objects.rows()));
  w.u32(static_cast<std::uint32_t>(bundle.objects.cols()));
  w.u32(static_cast<std::uint32_t>(bundle.article_layers.size()));
  w.u32(static_cast<std::uint32_t>(bundle.article_len()));
  w.u32(static_cast<std::uint32_t>(
      bundle.article_layers.empty() ? 0 : bundle.article_layers[0].cols()));
  for (std::uint32_t id : bundle.article_token_ids) w.u32(id);
  for (double v : bundle.image.data()) w.f32(v);
  for (double v : bundle.faces.data()) w.f32(v);
  for (double v : bundle.objects.data()) w.f32(v);
  for (const Tensor& layer : bundle.article_layers) {
    for (double v : layer.data()) w.f32(v);
  }
  w.done();
}

ContextBundle load_context(const std::string& path, const ContextSpec& spec) {
  BinaryReader r(path, "ctx");
  r.expect_magic("CTX1");
  std::uint32_t m_image = r.u32("m_image");
  std::uint32_t d_image = r.u32("d_image");
  std::uint32_t n_faces = r.u32("n_faces");
  std::uint32_t d_face = r.u32("d_face");
  std::uint32_t n_objects = r.u32("n_objects");
  std::uint32_t d_object = r.u32("d_object");
  std::uint32_t n_layers = r.u32("n_layers");
  std::uint32_t article_len = r.u32("article_len");
  std::uint32_t d_article = r.u32("d_article");

  ContextBundle b;
  b.article_token_ids.reserve(article_len);
  for (std::uint32_t i = 0; i < article_len; ++i) {
    b.article_token_ids.push_back(r.u32("article token ids"));
  }
  auto read_matrix = [&r](std::uint32_t rows, std::uint32_t cols, const char* what) {
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.f32(what);
    return t;
  };
  b.image = read_matrix(m_image, d_image, "image payload");
  b.faces = read_matrix(n_faces, d_face, "face payload");
  b.objects = read_matrix(n_objects, d_object, "object payload");
  b.article_layers.reserve(n_layers);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    b.article_layers.push_back(read_matrix(article_len, d_article, "article layer payload"));
  }
  r.expect_end();
  b.validate(spec);
  return b;
}

}  // namespace newscap
