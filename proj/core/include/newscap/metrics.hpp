#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "newscap/dataset.hpp"
#include "newscap/errors.hpp"

namespace newscap {

/// One generated caption, as written to the predictions JSONL
/// ({"example_id","caption","token_ids","logprob"}).
struct Prediction {
  std::string example_id;
  std::string caption;
  std::vector<int> token_ids;
  double logprob = 0.0;
};
std::vector<Prediction> load_predictions(const std::string& path);
void save_predictions(const std::vector<Prediction>& predictions, const std::string& path);

namespace metrics {

/// Caption preprocessing for the overlap metrics: lowercase, strip terminal
/// punctuation, split on whitespace.
std::vector<std::string> normalize_caption(const std::string& text);

/// Corpus BLEU-1..4: clipped n-gram precision pooled over the corpus,
/// geometric mean, multiplicative brevity penalty, no smoothing. A zero
/// precision at any order zeroes that score.
std::array<double, 4> corpus_bleu(
    const std::vector<std::pair<std::vector<std::string>,
                                std::vector<std::vector<std::string>>>>& pairs,
    std::size_t max_n = 4);

/// Sentence BLEU of the given order (corpus of one).
double bleu(const std::vector<std::string>& candidate,
            const std::vector<std::vector<std::string>>& references, std::size_t max_n = 4);

/// Corpus CIDEr: tf-idf n-gram cosine for n = 1..4, averaged over n and over
/// references, scaled by 10, with the Gaussian length penalty
/// exp(-(lc-lr)^2 / (2*6^2)). Zero-norm vectors contribute 0. idf uses
/// reference sets as documents. Throws DomainError on an empty corpus.
struct CiderResult {
  double corpus = 0.0;
  std::vector<double> per_example;
};
CiderResult cider(const std::vector<std::pair<std::vector<std::string>,
                                              std::vector<std::vector<std::string>>>>& pairs);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
};
/// Exact-string set precision/recall; empty generated set gives P = 0, empty
/// reference set gives R = 0.
Prf entity_prf(const std::set<std::string>& generated, const std::set<std::string>& reference);

/// Gazetteer surfaces occurring as substrings of the generated text.
std::set<std::string> extract_generated_entities(const std::string& text,
                                                 const std::set<std::string>& gazetteer);

/// True when the surface appears in none of the training captions.
bool is_rare(const std::string& surface, const std::vector<std::string>& training_captions);

/// Type-token ratio: unique lowercase words / total words.
double ttr(const std::string& caption);

/// Heuristic syllable count: maximal aeiouy groups, minus a silent trailing
/// 'e' (kept for "-le" endings), floor 1.
std::size_t syllable_count(const std::string& word);

/// Flesch reading ease: 206.835 - 1.015*(W/S) - 84.6*(B/W).
double fre(const std::string& caption);

/// The corpus report written by the evaluate command.
struct Report {
  double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
  double cider = 0.0;
  double entity_p = 0.0, entity_r = 0.0;
  double person_p = 0.0, person_r = 0.0;
  double rare_p = 0.0, rare_r = 0.0;
  double mean_len = 0.0, mean_ttr = 0.0, mean_fre = 0.0;

  std::string to_json() const;
};

/// Scores predictions against their dataset examples. Every prediction id
/// must resolve. training_captions feed the rare-proper-noun filter;
/// entity matching is micro-averaged over the corpus.
Report evaluate_run(const std::vector<Prediction>& predictions,
                    const std::vector<NewsExample>& examples,
                    const std::vector<std::string>& training_captions);

void save_report(const Report& report, const std::string& path);

}  // namespace metrics
}  // namespace newscap
