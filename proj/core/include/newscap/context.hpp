#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "newscap/tape.hpp"
#include "newscap/tensor.hpp"

namespace newscap {

/// Declared shapes of the four context domains. Full-scale values mirror the
/// upstream encoders (2048-dim image patches from a 7x7 grid, 512-dim face
/// embeddings capped at 4, 2048-dim objects capped at 64, 1024-dim article
/// token embeddings over a 25-layer stack); the defaults here are the desk
/// scale used by tests and fixtures.
struct ContextSpec {
  std::size_t d_image = 32;
  std::size_t m_image = 49;
  std::size_t d_face = 32;
  std::size_t max_faces = 4;
  std::size_t d_object = 32;
  std::size_t max_objects = 8;
  double object_confidence_min = 0.3;
  std::size_t d_article = 32;
  std::size_t n_layers = 3;  // includes layer 0

  /// The published encoder dimensions.
  static ContextSpec full_scale();

  void validate() const;
};

/// The four encoder output sets plus the raw article layer stack feeding the
/// learned layer mix. Immutable after construction; safe for concurrent reads.
struct ContextBundle {
  Tensor image;                       // m_image x d_image
  Tensor faces;                       // n_faces x d_face (may have 0 rows)
  Tensor objects;                     // n_objects x d_object (may have 0 rows)
  std::vector<Tensor> article_layers; // n_layers matrices, each article_len x d_article
  std::vector<std::uint32_t> article_token_ids;

  std::size_t article_len() const {
    return article_layers.empty() ? 0 : article_layers[0].rows();
  }

  /// Checks every shape against the spec; throws ValidationError.
  void validate(const ContextSpec& spec) const;
};

/// Learnable logits for the article layer mix; softmax-normalized before the
/// weighted sum so the mixture stays convex.
struct LayerMixWeights {
  Tensor logits;  // [n_layers]

  static LayerMixWeights init(std::size_t n_layers);
};

/// Weighted sum across article layers: alpha = softmax(logits),
/// x_i = sum_l alpha_l * g_li. Gradient flows into the logits.
/// `row_begin`/`row_end` select the article window; pass 0 and article_len
/// for the whole article.
Var mix_article_layers(Tape& tape, const ContextBundle& bundle, Var logits,
                       std::size_t row_begin, std::size_t row_end);
Var mix_article_layers(Tape& tape, const ContextBundle& bundle, Var logits);

/// Deterministic pseudo-random bundle; same seed gives a bit-identical
/// bundle. Embedding entries are uniform(-1, 1) scaled by 1/sqrt(dim) from a
/// splitmix64 counter stream. Article token ids are drawn below vocab_size.
ContextBundle synth_context(std::uint64_t seed, const ContextSpec& spec, std::size_t n_faces,
                            std::size_t n_objects, std::size_t article_len,
                            std::size_t vocab_size = 1000);

/// CTX1 binary file (little-endian): magic "CTX1"; u32 m_image, d_image,
/// n_faces, d_face, n_objects, d_object, n_layers, article_len, d_article;
/// u32 article token ids; f32 payloads image, faces, objects, article_layers,
/// each row-major.
void save_context(const ContextBundle& bundle, const std::string& path);
ContextBundle load_context(const std::string& path, const ContextSpec& spec);

}  // namespace newscap
