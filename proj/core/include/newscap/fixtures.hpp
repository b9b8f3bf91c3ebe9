#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "newscap/bpe.hpp"
#include "newscap/dataset.hpp"
#include "newscap/trainer.hpp"

namespace newscap {
namespace fixtures {

/// Synthetic news dataset: a BPE training corpus, a trained vocabulary, and
/// examples with deterministic context bundles. Stands in for the scraped
/// corpora and the pretrained encoders.
struct SynthDataConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 32;
  std::size_t n_valid = 0;
  std::size_t n_test = 0;
  std::size_t vocab_target = 1000;
  ContextSpec ctx;
  std::size_t article_len = 48;
  std::size_t caption_min_tokens = 8;
  std::size_t caption_max_tokens = 15;
};

struct SynthData {
  bpe::BpeVocab vocab;
  std::vector<std::string> corpus;
  std::vector<NewsExample> examples;
  std::vector<ContextBundle> bundles;  // aligned with examples
};

SynthData make_synth_data(const SynthDataConfig& config);

/// Writes corpus.txt, vocab.bpe, data.jsonl, split.json, and ctx/<id>.ctx1
/// under dir (created if missing).
void write_synth_data(const SynthData& data, const std::string& dir);

/// Teacher-forcing view of one split.
std::vector<TrainExample> to_train_examples(const SynthData& data, Split split,
                                            const WindowMode& window);

/// Face-to-name probe task: the correct first caption token is a
/// deterministic function of the face embedding and never appears in the
/// article context. zero_faces replaces every face matrix with zeros while
/// keeping shapes, removing the signal.
struct FaceTaskConfig {
  std::uint64_t seed = 0;
  std::size_t n_names = 8;
  std::size_t n_train = 64;
  std::size_t n_eval = 64;
  bool zero_faces = false;
};

struct FaceTask {
  bpe::BpeVocab vocab;
  std::vector<int> name_token_ids;
  std::vector<TrainExample> train;
  std::vector<TrainExample> eval;
  ContextSpec ctx;
};

FaceTask make_face_task(const FaceTaskConfig& config);

}  // namespace fixtures
}  // namespace newscap
