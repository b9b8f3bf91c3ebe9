#include "newscap/generation.hpp"

#include <algorithm>
#include <cmath>

namespace newscap {

void GenConfig::validate() const {
  if (max_len < 1) throw ValidationError("gen config: max_len must be at least 1");
  if (beam_size < 1) throw ValidationError("gen config: beam_size must be at least 1");
  if (length_norm < 0.0) throw ValidationError("gen config: length_norm must be nonnegative");
}

double Hypothesis::normalized(double length_norm) const {
  double len = static_cast<double>(std::max<std::size_t>(1, scored_steps()));
  return logp / std::pow(len, length_norm);
}

namespace {

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

Hypothesis greedy_search(const StepScorer& scorer, const GenConfig& config) {
  config.validate();
  Hypothesis hyp;
  while (true) {
    std::vector<double> lp = scorer(hyp.ids);
    if (hyp.ids.size() >= config.max_len) {
      // Budget exhausted: EOS is forced but still scored by the model.
      hyp.step_logps.push_back(lp[bpe::kEosId]);
      hyp.logp += lp[bpe::kEosId];
      return hyp;
    }
    std::size_t best = argmax_lowest(lp);
    hyp.step_logps.push_back(lp[best]);
    hyp.logp += lp[best];
    if (best == bpe::kEosId) return hyp;
    hyp.ids.push_back(static_cast<int>(best));
  }
}

Hypothesis beam_search(const StepScorer& scorer, const GenConfig& config, BeamDiagnostics* diag) {
  config.validate();
  struct Beam {
    std::vector<int> ids;
    std::vector<double> step_logps;
    double logp = 0.0;
  };
  std::vector<Beam> beams{Beam{}};
  std::vector<Hypothesis> finished;

  while (!beams.empty()) {
    struct Candidate {
      std::size_t beam = 0;
      int token = 0;
      double step_logp = 0.0;
      double total = 0.0;
    };
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      std::vector<double> lp = scorer(beams[b].ids);
      if (beams[b].ids.size() >= config.max_len) {
        // Forced EOS at the length budget.
        Hypothesis hyp{beams[b].ids, beams[b].step_logps, beams[b].logp};
        hyp.step_logps.push_back(lp[bpe::kEosId]);
        hyp.logp += lp[bpe::kEosId];
        finished.push_back(std::move(hyp));
        continue;
      }
      for (std::size_t v = 0; v < lp.size(); ++v) {
        candidates.push_back(Candidate{b, static_cast<int>(v), lp[v], beams[b].logp + lp[v]});
      }
    }
    if (candidates.empty()) break;
    // Rank by running sum; ties prefer the lower token id then lower beam
    // index so search is deterministic.
    std::size_t keep = std::min(config.beam_size, candidates.size());
    std::partial_sort(candidates.begin(),
                      candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.total != b.total) return a.total > b.total;
                        if (a.token != b.token) return a.token < b.token;
                        return a.beam < b.beam;
                      });
    std::vector<Beam> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = candidates[c];
      Beam nb = beams[cand.beam];
      nb.step_logps.push_back(cand.step_logp);
      nb.logp = cand.total;
      if (cand.token == bpe::kEosId) {
        finished.push_back(Hypothesis{std::move(nb.ids), std::move(nb.step_logps), nb.logp});
      } else {
        nb.ids.push_back(cand.token);
        next.push_back(std::move(nb));
      }
    }
    beams = std::move(next);
  }

  if (finished.empty()) throw ContractError("beam search: no finished hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].normalized(config.length_norm) >
        finished[best].normalized(config.length_norm)) {
      best = i;
    }
  }
  Hypothesis result = finished[best];
  if (diag != nullptr) diag->finished = std::move(finished);
  return result;
}

StepScorer model_scorer(CaptionModel& model, const ContextBundle& bundle,
                        std::size_t article_begin, std::size_t article_end) {
  return [&model, &bundle, article_begin, article_end](const std::vector<int>& prefix) {
    Tape tape;
    DecoderRun run(tape, model, bundle, article_begin, article_end, /*trainable=*/false);
    Var h = run.step(bpe::kBosId);
    for (int id : prefix) h = run.step(id);
    return tape.value(run.log_probs(h)).data();
  };
}

GenResult generate_greedy(CaptionModel& model, const ContextBundle& bundle,
                          std::size_t article_begin, std::size_t article_end,
                          const bpe::BpeVocab& vocab, const GenConfig& config) {
  Hypothesis hyp = greedy_search(model_scorer(model, bundle, article_begin, article_end), config);
  return GenResult{bpe::decode(hyp.ids, vocab), std::move(hyp)};
}

GenResult generate_beam(CaptionModel& model, const ContextBundle& bundle,
                        std::size_t article_begin, std::size_t article_end,
                        const bpe::BpeVocab& vocab, const GenConfig& config,
                        BeamDiagnostics* diag) {
  Hypothesis hyp =
      beam_search(model_scorer(model, bundle, article_begin, article_end), config, diag);
  return GenResult{bpe::decode(hyp.ids, vocab), std::move(hyp)};
}

}  // namespace newscap
