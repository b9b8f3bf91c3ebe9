#include "newscap/fixtures.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "newscap/context.hpp"
#include "newscap/rng.hpp"

namespace newscap {
namespace fixtures {

namespace {

const char* kOnsets[] = {"b",  "c",  "d",  "f",  "g",  "h",  "j",  "k",  "l",
                         "m",  "n",  "p",  "r",  "s",  "t",  "v",  "w",  "z",
                         "br", "ch", "cl", "dr", "fl", "gr", "pl", "sh", "st", "tr"};
const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "ou"};
const char* kCodas[] = {"", "n", "r", "s", "t", "l", "m", "ck", "nd", "st"};

std::string make_word(Rng& rng) {
  std::size_t syllables = 1 + rng.below(3);
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kOnsets[rng.below(std::size(kOnsets))];
    w += kVowels[rng.below(std::size(kVowels))];
  }
  w += kCodas[rng.below(std::size(kCodas))];
  return w;
}

std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += " ";
    out += words[i];
  }
  return out;
}

std::string iso_date(std::size_t index) {
  // Monotone fake dates: one day per example starting 2019-01-01.
  std::size_t year = 2019 + index / 360;
  std::size_t month = 1 + (index / 30) % 12;
  std::size_t day = 1 + index % 30;
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04zu-%02zu-%02zu", year, month, day);
  return buf;
}

}  // namespace

SynthData make_synth_data(const SynthDataConfig& config) {
  Rng rng(config.seed);
  // Word pool: a slice of capitalized names plus common words.
  std::vector<std::string> names, words;
  for (std::size_t i = 0; i < 64; ++i) names.push_back(capitalize(make_word(rng)));
  for (std::size_t i = 0; i < 360; ++i) words.push_back(make_word(rng));

  SynthData data;
  auto build_corpus = [&](std::size_t n_sentences) {
    std::vector<std::string> corpus;
    Rng crng(config.seed + 17);
    for (std::size_t s = 0; s < n_sentences; ++s) {
      std::vector<std::string> sent;
      std::size_t len = 6 + crng.below(6);
      for (std::size_t w = 0; w < len; ++w) {
        if (w == 0 && crng.below(3) == 0) {
          sent.push_back(names[crng.below(names.size())]);
        } else {
          sent.push_back(words[crng.below(words.size())]);
        }
      }
      corpus.push_back(join(sent));
    }
    return corpus;
  };

  // Grow the corpus until the merge table fills the requested vocabulary.
  std::size_t n_sentences = 2500;
  for (int attempt = 0; attempt < 5; ++attempt) {
    data.corpus = build_corpus(n_sentences);
    data.vocab = bpe::train_merges(data.corpus, config.vocab_target);
    if (data.vocab.size() == config.vocab_target) break;
    n_sentences *= 2;
  }
  if (data.vocab.size() != config.vocab_target) {
    throw ContractError("synth data: corpus too small to reach vocabulary " +
                        std::to_string(config.vocab_target));
  }

  std::size_t total = config.n_train + config.n_valid + config.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    NewsExample e;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "ex%04zu", i);
    e.id = idbuf;
    e.split = i < config.n_train            ? Split::train
              : i < config.n_train + config.n_valid ? Split::valid
                                                    : Split::test;
    e.date = iso_date(i);

    // Caption: a name followed by pool words until the BPE length lands in
    // the configured band.
    std::string name = names[rng.below(names.size())];
    std::vector<std::string> caption_words = {name};
    std::size_t guard = 0;
    while (true) {
      if (++guard > 200) {
        throw ContractError("synth data: could not fit caption length band");
      }
      std::string candidate_word = words[rng.below(words.size())];
      std::vector<std::string> tentative = caption_words;
      tentative.push_back(candidate_word);
      std::size_t len = bpe::encode(join(tentative), data.vocab).size();
      if (len > config.caption_max_tokens) {
        std::size_t have = bpe::encode(join(caption_words), data.vocab).size();
        if (have >= config.caption_min_tokens) break;
        continue;  // word too long, try another
      }
      caption_words = std::move(tentative);
      if (len >= config.caption_min_tokens && rng.below(3) == 0) break;
    }
    e.caption_text = join(caption_words);
    e.entities.push_back(EntityMention{name, EntityLabel::person});

    std::vector<std::string> article_words;
    std::size_t article_word_count = 40 + rng.below(40);
    for (std::size_t w = 0; w < article_word_count; ++w) {
      article_words.push_back(words[rng.below(words.size())]);
    }
    e.article_text = join(article_words);
    e.image_position = (i % 7 == 3) ? -1
                                    : static_cast<std::int64_t>(rng.below(config.article_len));
    e.context_path = "ctx/" + e.id + ".ctx1";
    e.validate();

    std::size_t n_faces = rng.below(config.ctx.max_faces + 1);
    std::size_t n_objects = rng.below(config.ctx.max_objects + 1);
    data.bundles.push_back(synth_context(config.seed * 7919 + i, config.ctx, n_faces, n_objects,
                                         config.article_len, data.vocab.size()));
    data.examples.push_back(std::move(e));
  }
  return data;
}

void write_synth_data(const SynthData& data, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "ctx");
  {
    std::ofstream corpus(fs::path(dir) / "corpus.txt");
    for (const std::string& line : data.corpus) corpus << line << "\n";
  }
  bpe::save_vocab(data.vocab, (fs::path(dir) / "vocab.bpe").string());
  save_jsonl(data.examples, (fs::path(dir) / "data.jsonl").string());
  SplitManifest manifest;
  for (const NewsExample& e : data.examples) {
    switch (e.split) {
      case Split::train: manifest.train.push_back(e.id); break;
      case Split::valid: manifest.valid.push_back(e.id); break;
      case Split::test: manifest.test.push_back(e.id); break;
    }
  }
  manifest.temporal = true;
  validate_split(manifest, data.examples);
  save_split_manifest(manifest, (fs::path(dir) / "split.json").string());
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    save_context(data.bundles[i], (fs::path(dir) / data.examples[i].context_path).string());
  }
}

std::vector<TrainExample> to_train_examples(const SynthData& data, Split split,
                                            const WindowMode& window) {
  std::vector<TrainExample> out;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const NewsExample& e = data.examples[i];
    if (e.split != split) continue;
    TrainExample ex;
    ex.caption_ids = bpe::encode(e.caption_text, data.vocab);
    ex.context = data.bundles[i];
    auto [begin, end] = select_context_window(ex.context.article_len(), e.image_position, window);
    ex.article_begin = begin;
    ex.article_end = end;
    out.push_back(std::move(ex));
  }
  return out;
}

FaceTask make_face_task(const FaceTaskConfig& config) {
  FaceTask task;
  task.ctx.d_image = 16;
  task.ctx.m_image = 4;
  task.ctx.d_face = 16;
  task.ctx.max_faces = 1;
  task.ctx.d_object = 16;
  task.ctx.max_objects = 2;
  task.ctx.d_article = 16;
  task.ctx.n_layers = 2;
  const std::size_t article_len = 16;

  static const std::vector<std::string> kNames = {"aldez", "boric", "cavel", "drunov",
                                                  "elman", "faron", "gilts", "hoben"};
  if (config.n_names > kNames.size()) {
    throw DomainError("face task: at most " + std::to_string(kNames.size()) + " names");
  }
  std::vector<std::string> names(kNames.begin(),
                                 kNames.begin() + static_cast<std::ptrdiff_t>(config.n_names));

  // Corpus that fully merges every name into a single token.
  std::vector<std::string> corpus;
  Rng wrng(config.seed + 31);
  for (const std::string& name : names) {
    for (int r = 0; r < 20; ++r) corpus.push_back(name + " " + name + " " + name);
  }
  for (int s = 0; s < 200; ++s) {
    std::vector<std::string> sent;
    for (int w = 0; w < 6; ++w) sent.push_back(make_word(wrng));
    corpus.push_back(join(sent));
  }
  task.vocab = bpe::train_merges(corpus, 600);
  for (const std::string& name : names) {
    std::vector<int> ids = bpe::encode(name, task.vocab);
    if (ids.size() != 1) {
      throw ContractError("face task: name '" + name + "' did not merge to a single token");
    }
    task.name_token_ids.push_back(ids[0]);
  }

  // One deterministic face embedding per name, shared by train and eval.
  std::vector<Tensor> face_vectors;
  for (std::size_t k = 0; k < names.size(); ++k) {
    Rng frng(config.seed * 131 + 7 * k + 3);
    Tensor f({1, task.ctx.d_face});
    double scale = 1.0 / std::sqrt(static_cast<double>(task.ctx.d_face));
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = frng.uniform(-1.0, 1.0) * scale;
    face_vectors.push_back(std::move(f));
  }

  auto build = [&](std::size_t count, std::uint64_t salt) {
    std::vector<TrainExample> out;
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t name_idx = i % names.size();
      TrainExample ex;
      ex.context = synth_context(config.seed * 104729 + salt * 7919 + i, task.ctx,
                                 /*n_faces=*/1, /*n_objects=*/1, article_len, task.vocab.size());
      ex.context.faces = config.zero_faces ? Tensor({1, task.ctx.d_face})
                                           : face_vectors[name_idx];
      ex.caption_ids = {task.name_token_ids[name_idx]};
      ex.article_begin = 0;
      ex.article_end = ex.context.article_len();
      out.push_back(std::move(ex));
    }
    return out;
  };
  task.train = build(config.n_train, 1);
  task.eval = build(config.n_eval, 2);
  return task;
}

}  // namespace fixtures
}  // namespace newscap
