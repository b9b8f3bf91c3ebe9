#pragma once

#include <functional>
#include <string>
#include <vector>

#include "newscap/bpe.hpp"
#include "newscap/decoder.hpp"

namespace newscap {

struct GenConfig {
  std::size_t max_len = 50;  // content tokens before EOS is forced
  enum class Mode { greedy, beam } mode = Mode::greedy;
  std::size_t beam_size = 5;
  double length_norm = 1.0;  // exponent on length when ranking hypotheses

  void validate() const;
};

/// A finished hypothesis: content token ids (no BOS/EOS), the log-prob of
/// each scored step including the EOS step, and their sum.
struct Hypothesis {
  std::vector<int> ids;
  std::vector<double> step_logps;
  double logp = 0.0;

  std::size_t scored_steps() const { return step_logps.size(); }
  double normalized(double length_norm) const;
};

struct BeamDiagnostics {
  std::vector<Hypothesis> finished;  // every completed hypothesis seen
};

/// Log-probabilities over the vocabulary for the next step given a prefix of
/// content ids. Abstracts the model so searches can be tested against
/// hand-built tables.
using StepScorer = std::function<std::vector<double>(const std::vector<int>& prefix)>;

/// Argmax decoding (ties to the lowest token id). Stops at EOS or after
/// max_len content tokens, in which case EOS is scored as a final forced
/// step so the emitted log-probs always cover content + EOS.
Hypothesis greedy_search(const StepScorer& scorer, const GenConfig& config);

/// Length-normalized beam search. beam_size 1 reproduces greedy_search
/// token for token.
Hypothesis beam_search(const StepScorer& scorer, const GenConfig& config,
                       BeamDiagnostics* diag = nullptr);

/// Scorer backed by a caption model; re-runs the decoder over the prefix.
StepScorer model_scorer(CaptionModel& model, const ContextBundle& bundle,
                        std::size_t article_begin, std::size_t article_end);

struct GenResult {
  std::string caption;
  Hypothesis hypothesis;
};

GenResult generate_greedy(CaptionModel& model, const ContextBundle& bundle,
                          std::size_t article_begin, std::size_t article_end,
                          const bpe::BpeVocab& vocab, const GenConfig& config);
GenResult generate_beam(CaptionModel& model, const ContextBundle& bundle,
                        std::size_t article_begin, std::size_t article_end,
                        const bpe::BpeVocab& vocab, const GenConfig& config,
                        BeamDiagnostics* diag = nullptr);

}  // namespace newscap
