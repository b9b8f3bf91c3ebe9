#include "newscap/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "json.hpp"

namespace newscap {

using nlohmann::json;

std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("predictions: cannot open " + path);
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json obj = json::parse(line);
      Prediction p;
      p.example_id = obj.at("example_id").get<std::string>();
      p.caption = obj.at("caption").get<std::string>();
      p.token_ids = obj.at("token_ids").get<std::vector<int>>();
      p.logprob = obj.at("logprob").get<double>();
      out.push_back(std::move(p));
    } catch (const json::exception& err) {
      throw ParseError("predictions: line " + std::to_string(lineno) + ": " + err.what());
    }
  }
  return out;
}

void save_predictions(const std::vector<Prediction>& predictions, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("predictions: cannot open " + path + " for writing");
  for (const Prediction& p : predictions) {
    json obj = {{"example_id", p.example_id},
                {"caption", p.caption},
                {"token_ids", p.token_ids},
                {"logprob", p.logprob}};
    out << obj.dump() << "\n";
  }
}

namespace metrics {

namespace {

constexpr char kGramSep = '\x1f';

std::vector<std::string> ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  std::vector<std::string> out;
  if (tokens.size() < n) return out;
  out.reserve(tokens.size() - n + 1);
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string g = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      g.push_back(kGramSep);
      g += tokens[i + j];
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::unordered_map<std::string, std::size_t> gram_counts(const std::vector<std::string>& tokens,
                                                         std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  for (std::string& g : ngrams(tokens, n)) counts[std::move(g)] += 1;
  return counts;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> normalize_caption(const std::string& text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  // Strip terminal punctuation of the whole caption.
  while (!lowered.empty()) {
    char c = lowered.back();
    if (c == '.' || c == '!' || c == '?') {
      lowered.pop_back();
    } else {
      break;
    }
  }
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && std::isspace(static_cast<unsigned char>(lowered[i]))) ++i;
    std::size_t start = i;
    while (i < lowered.size() && !std::isspace(static_cast<unsigned char>(lowered[i]))) ++i;
    if (i > start) tokens.push_back(lowered.substr(start, i - start));
  }
  return tokens;
}

std::array<double, 4> corpus_bleu(
    const std::vector<std::pair<std::vector<std::string>,
                                std::vector<std::vector<std::string>>>>& pairs,
    std::size_t max_n) {
  std::array<double, 4> scores{0.0, 0.0, 0.0, 0.0};
  if (max_n < 1 || max_n > 4) throw DomainError("bleu: max_n must lie in [1, 4]");
  std::array<std::size_t, 4> matched{}, total{};
  std::size_t cand_len = 0, ref_len = 0;
  for (const auto& [cand, refs] : pairs) {
    if (refs.empty()) throw DomainError("bleu: example without references");
    cand_len += cand.size();
    // Effective reference length: closest to the candidate, ties shorter.
    std::size_t best_ref = refs[0].size();
    for (const auto& r : refs) {
      auto diff = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (diff(r.size()) < diff(best_ref) || (diff(r.size()) == diff(best_ref) &&
                                              r.size() < best_ref)) {
        best_ref = r.size();
      }
    }
    ref_len += best_ref;
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto cand_counts = gram_counts(cand, n);
      std::unordered_map<std::string, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : gram_counts(r, n)) {
          max_ref[g] = std::max(max_ref[g], c);
        }
      }
      for (const auto& [g, c] : cand_counts) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
      total[n - 1] += cand.size() >= n ? cand.size() - n + 1 : 0;
    }
  }
  if (cand_len == 0) return scores;
  double bp = cand_len > ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  for (std::size_t k = 1; k <= max_n; ++k) {
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 1; n <= k; ++n) {
      if (matched[n - 1] == 0 || total[n - 1] == 0) {
        zero = true;
        break;
      }
      log_sum += std::log(static_cast<double>(matched[n - 1]) /
                          static_cast<double>(total[n - 1]));
    }
    scores[k - 1] = zero ? 0.0 : bp * std::exp(log_sum / static_cast<double>(k));
  }
  return scores;
}

double bleu(const std::vector<std::string>& candidate,
            const std::vector<std::vector<std::string>>& references, std::size_t max_n) {
  return corpus_bleu({{candidate, references}}, max_n)[max_n - 1];
}

CiderResult cider(const std::vector<std::pair<std::vector<std::string>,
                                              std::vector<std::vector<std::string>>>>& pairs) {
  if (pairs.empty()) throw DomainError("cider: empty corpus");
  constexpr std::size_t kMaxN = 4;
  constexpr double kSigma = 6.0;
  double log_n = std::log(static_cast<double>(pairs.size()));

  // Document frequency over reference sets.
  std::array<std::unordered_map<std::string, std::size_t>, kMaxN> df;
  for (const auto& [cand, refs] : pairs) {
    if (refs.empty()) throw DomainError("cider: example without references");
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::set<std::string> seen;
      for (const auto& r : refs) {
        for (std::string& g : ngrams(r, n)) seen.insert(std::move(g));
      }
      for (const std::string& g : seen) df[n - 1][g] += 1;
    }
  }
  auto idf = [&](const std::string& g, std::size_t n) {
    auto it = df[n - 1].find(g);
    double d = it == df[n - 1].end() ? 1.0 : static_cast<double>(it->second);
    return log_n - std::log(d);
  };
  auto tfidf = [&](const std::vector<std::string>& tokens, std::size_t n) {
    std::unordered_map<std::string, double> vec;
    for (const auto& [g, c] : gram_counts(tokens, n)) {
      vec[g] = static_cast<double>(c) * idf(g, n);
    }
    return vec;
  };

  CiderResult result;
  result.per_example.reserve(pairs.size());
  for (const auto& [cand, refs] : pairs) {
    std::array<std::unordered_map<std::string, double>, kMaxN> cand_vec;
    std::array<double, kMaxN> cand_norm{};
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      cand_vec[n - 1] = tfidf(cand, n);
      double sq = 0.0;
      for (const auto& [g, v] : cand_vec[n - 1]) sq += v * v;
      cand_norm[n - 1] = std::sqrt(sq);
    }
    double score = 0.0;
    for (const auto& r : refs) {
      double penalty = std::exp(-std::pow(static_cast<double>(cand.size()) -
                                              static_cast<double>(r.size()),
                                          2.0) /
                                (2.0 * kSigma * kSigma));
      double sim_sum = 0.0;
      for (std::size_t n = 1; n <= kMaxN; ++n) {
        auto ref_vec = tfidf(r, n);
        double sq = 0.0, dot = 0.0;
        for (const auto& [g, v] : ref_vec) sq += v * v;
        double ref_norm = std::sqrt(sq);
        if (cand_norm[n - 1] == 0.0 || ref_norm == 0.0) continue;  // 0/0 -> 0
        for (const auto& [g, v] : cand_vec[n - 1]) {
          auto it = ref_vec.find(g);
          if (it != ref_vec.end()) dot += v * it->second;
        }
        sim_sum += dot / (cand_norm[n - 1] * ref_norm);
      }
      score += penalty * sim_sum / static_cast<double>(kMaxN);
    }
    score = 10.0 * score / static_cast<double>(refs.size());
    result.per_example.push_back(score);
    result.corpus += score;
  }
  result.corpus /= static_cast<double>(pairs.size());
  return result;
}

Prf entity_prf(const std::set<std::string>& generated, const std::set<std::string>& reference) {
  std::size_t inter = 0;
  for (const std::string& g : generated) inter += reference.count(g);
  Prf out;
  out.precision = generated.empty() ? 0.0
                                    : static_cast<double>(inter) /
                                          static_cast<double>(generated.size());
  out.recall = reference.empty() ? 0.0
                                 : static_cast<double>(inter) /
                                       static_cast<double>(reference.size());
  return out;
}

std::set<std::string> extract_generated_entities(const std::string& text,
                                                 const std::set<std::string>& gazetteer) {
  std::set<std::string> out;
  for (const std::string& surface : gazetteer) {
    if (!surface.empty() && text.find(surface) != std::string::npos) out.insert(surface);
  }
  return out;
}

bool is_rare(const std::string& surface, const std::vector<std::string>& training_captions) {
  for (const std::string& caption : training_captions) {
    if (caption.find(surface) != std::string::npos) return false;
  }
  return true;
}

double ttr(const std::string& caption) {
  std::vector<std::string> tokens = normalize_caption(caption);
  if (tokens.empty()) throw DomainError("ttr: caption has no words");
  std::set<std::string> unique(tokens.begin(), tokens.end());
  return static_cast<double>(unique.size()) / static_cast<double>(tokens.size());
}

std::size_t syllable_count(const std::string& word) {
  std::string letters;
  for (char c : word) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      letters.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (letters.empty()) return 0;
  auto is_vowel = [](char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
  };
  std::size_t groups = 0;
  bool in_group = false;
  for (char c : letters) {
    if (is_vowel(c)) {
      if (!in_group) ++groups;
      in_group = true;
    } else {
      in_group = false;
    }
  }
  bool silent_e = letters.size() >= 2 && letters.back() == 'e' &&
                  !(letters.size() >= 2 && letters[letters.size() - 2] == 'l');
  if (silent_e && groups > 0) --groups;
  return std::max<std::size_t>(groups, 1);
}

double fre(const std::string& caption) {
  std::vector<std::string> tokens = normalize_caption(caption);
  if (tokens.empty()) throw DomainError("fre: caption has no words");
  // Sentences: segments between . ! ? that contain at least one word character.
  std::size_t sentences = 0;
  bool has_word = false;
  for (char c : caption) {
    if (c == '.' || c == '!' || c == '?') {
      if (has_word) ++sentences;
      has_word = false;
    } else if (is_word_char(c)) {
      has_word = true;
    }
  }
  if (has_word) ++sentences;
  sentences = std::max<std::size_t>(sentences, 1);

  std::size_t syllables = 0;
  for (const std::string& t : tokens) syllables += syllable_count(t);
  double W = static_cast<double>(tokens.size());
  double S = static_cast<double>(sentences);
  double B = static_cast<double>(syllables);
  return 206.835 - 1.015 * (W / S) - 84.6 * (B / W);
}

std::string Report::to_json() const {
  json obj = {{"bleu1", bleu1},         {"bleu2", bleu2},
              {"bleu3", bleu3},         {"bleu4", bleu4},
              {"cider", cider},         {"entity_p", entity_p},
              {"entity_r", entity_r},   {"person_p", person_p},
              {"person_r", person_r},   {"rare_p", rare_p},
              {"rare_r", rare_r},       {"mean_len", mean_len},
              {"mean_ttr", mean_ttr},   {"mean_fre", mean_fre}};
  return obj.dump(2);
}

Report evaluate_run(const std::vector<Prediction>& predictions,
                    const std::vector<NewsExample>& examples,
                    const std::vector<std::string>& training_captions) {
  std::unordered_map<std::string, const NewsExample*> by_id;
  for (const NewsExample& e : examples) by_id[e.id] = &e;

  struct Row {
    const Prediction* pred;
    const NewsExample* example;
  };
  std::vector<Row> rows;
  rows.reserve(predictions.size());
  for (const Prediction& p : predictions) {
    auto it = by_id.find(p.example_id);
    if (it == by_id.end()) {
      throw DomainError("evaluate: prediction id '" + p.example_id + "' not in dataset");
    }
    rows.push_back(Row{&p, it->second});
  }

  // Gazetteers from the evaluation corpus's reference entities.
  std::set<std::string> gazetteer, person_gazetteer;
  for (const Row& row : rows) {
    for (const EntityMention& m : row.example->entities) {
      gazetteer.insert(m.surface);
      if (m.label == EntityLabel::person) person_gazetteer.insert(m.surface);
    }
  }

  std::vector<std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>>> pairs;
  pairs.reserve(rows.size());
  Report report;
  struct Micro {
    std::size_t inter = 0, gen = 0, ref = 0;
    void add(const std::set<std::string>& g, const std::set<std::string>& r) {
      for (const std::string& s : g) inter += r.count(s);
      gen += g.size();
      ref += r.size();
    }
    double precision() const { return gen == 0 ? 0.0 : static_cast<double>(inter) / gen; }
    double recall() const { return ref == 0 ? 0.0 : static_cast<double>(inter) / ref; }
  };
  Micro all, person, rare;
  double len_sum = 0.0, ttr_sum = 0.0, fre_sum = 0.0;

  for (const Row& row : rows) {
    std::vector<std::string> cand = normalize_caption(row.pred->caption);
    std::vector<std::vector<std::string>> refs{normalize_caption(row.example->caption_text)};
    len_sum += static_cast<double>(cand.size());
    if (!cand.empty()) {
      ttr_sum += ttr(row.pred->caption);
      fre_sum += fre(row.pred->caption);
    }
    pairs.emplace_back(std::move(cand), std::move(refs));

    std::set<std::string> ref_all, ref_person, ref_rare;
    for (const EntityMention& m : row.example->entities) {
      ref_all.insert(m.surface);
      if (m.label == EntityLabel::person) ref_person.insert(m.surface);
      if (is_rare(m.surface, training_captions)) ref_rare.insert(m.surface);
    }
    std::set<std::string> gen_all = extract_generated_entities(row.pred->caption, gazetteer);
    std::set<std::string> gen_person =
        extract_generated_entities(row.pred->caption, person_gazetteer);
    std::set<std::string> gen_rare;
    for (const std::string& s : gen_all) {
      if (is_rare(s, training_captions)) gen_rare.insert(s);
    }
    all.add(gen_all, ref_all);
    person.add(gen_person, ref_person);
    rare.add(gen_rare, ref_rare);
  }

  std::array<double, 4> bleu_scores = corpus_bleu(pairs);
  report.bleu1 = bleu_scores[0];
  report.bleu2 = bleu_scores[1];
  report.bleu3 = bleu_scores[2];
  report.bleu4 = bleu_scores[3];
  report.cider = pairs.empty() ? 0.0 : cider(pairs).corpus;
  report.entity_p = all.precision();
  report.entity_r = all.recall();
  report.person_p = person.precision();
  report.person_r = person.recall();
  report.rare_p = rare.precision();
  report.rare_r = rare.recall();
  std::size_t n = rows.size();
  if (n > 0) {
    report.mean_len = len_sum / static_cast<double>(n);
    report.mean_ttr = ttr_sum / static_cast<double>(n);
    report.mean_fre = fre_sum / static_cast<double>(n);
  }
  return report;
}

void save_report(const Report& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("report: cannot open " + path + " for writing");
  out << report.to_json() << "\n";
}

}  // namespace metrics
}  // namespace newscap
