// newscap: entity-aware news caption decoder over precomputed context
// embeddings. Subcommands cover BPE vocabulary training, synthetic fixture
// generation, model training, caption generation, metric evaluation, and the
// gradient-check suite.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "newscap/checkpoint.hpp"
#include "newscap/fixtures.hpp"
#include "newscap/generation.hpp"
#include "newscap/gradcheck_suite.hpp"
#include "newscap/metrics.hpp"
#include "newscap/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace newscap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const std::string& k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ValidationError("config: unknown key '" + where + it.key() + "'");
    }
  }
}

struct RunConfig {
  std::uint64_t seed = 0;
  std::string vocab_path;
  ContextSpec context;
  DecoderConfig decoder;
  ClusterSpec clusters = ClusterSpec::with_cutoffs({200, 400, 400});
  TrainConfig train;
  GenConfig generate;
  WindowMode window;
};

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

RunConfig parse_config(const json& root) {
  check_keys(root, {"seed", "vocab", "context", "decoder", "clusters", "train", "generate",
                    "window"},
             "");
  RunConfig c;
  maybe(root, "seed", c.seed);
  maybe(root, "vocab", c.vocab_path);
  if (root.contains("context")) {
    const json& ctx = root.at("context");
    check_keys(ctx, {"d_image", "m_image", "d_face", "max_faces", "d_object", "max_objects",
                     "object_confidence_min", "d_article", "n_layers"},
               "context.");
    maybe(ctx, "d_image", c.context.d_image);
    maybe(ctx, "m_image", c.context.m_image);
    maybe(ctx, "d_face", c.context.d_face);
    maybe(ctx, "max_faces", c.context.max_faces);
    maybe(ctx, "d_object", c.context.d_object);
    maybe(ctx, "max_objects", c.context.max_objects);
    maybe(ctx, "object_confidence_min", c.context.object_confidence_min);
    maybe(ctx, "d_article", c.context.d_article);
    maybe(ctx, "n_layers", c.context.n_layers);
  }
  if (root.contains("decoder")) {
    const json& dec = root.at("decoder");
    check_keys(dec, {"d_model", "n_heads", "n_blocks", "kernel_sizes", "attention_scaling",
                     "max_positions"},
               "decoder.");
    maybe(dec, "d_model", c.decoder.d_model);
    maybe(dec, "n_heads", c.decoder.n_heads);
    maybe(dec, "n_blocks", c.decoder.n_blocks);
    maybe(dec, "kernel_sizes", c.decoder.kernel_sizes);
    maybe(dec, "attention_scaling", c.decoder.attention_scaling);
    maybe(dec, "max_positions", c.decoder.max_positions);
  }
  if (root.contains("clusters")) {
    const json& cl = root.at("clusters");
    check_keys(cl, {"cutoffs", "tail_divisors"}, "clusters.");
    std::vector<std::size_t> cutoffs = c.clusters.cutoffs;
    maybe(cl, "cutoffs", cutoffs);
    c.clusters = ClusterSpec::with_cutoffs(cutoffs);
    maybe(cl, "tail_divisors", c.clusters.tail_divisors);
  }
  if (root.contains("train")) {
    const json& tr = root.at("train");
    check_keys(tr, {"beta1", "beta2", "eps", "peak_lr", "warmup_frac", "weight_decay",
                    "clip_norm", "batch_size", "total_steps", "n_threads"},
               "train.");
    maybe(tr, "beta1", c.train.beta1);
    maybe(tr, "beta2", c.train.beta2);
    maybe(tr, "eps", c.train.eps);
    maybe(tr, "peak_lr", c.train.peak_lr);
    maybe(tr, "warmup_frac", c.train.warmup_frac);
    maybe(tr, "weight_decay", c.train.weight_decay);
    maybe(tr, "clip_norm", c.train.clip_norm);
    maybe(tr, "batch_size", c.train.batch_size);
    maybe(tr, "total_steps", c.train.total_steps);
    maybe(tr, "n_threads", c.train.n_threads);
  }
  if (root.contains("generate")) {
    const json& g = root.at("generate");
    check_keys(g, {"max_len", "mode", "beam_size", "length_norm"}, "generate.");
    maybe(g, "max_len", c.generate.max_len);
    if (g.contains("mode")) {
      std::string mode = g.at("mode").get<std::string>();
      if (mode == "greedy") {
        c.generate.mode = GenConfig::Mode::greedy;
      } else if (mode == "beam") {
        c.generate.mode = GenConfig::Mode::beam;
      } else {
        throw ValidationError("config: unknown key 'generate.mode' value '" + mode + "'");
      }
    }
    maybe(g, "beam_size", c.generate.beam_size);
    maybe(g, "length_norm", c.generate.length_norm);
  }
  if (root.contains("window")) {
    const json& w = root.at("window");
    check_keys(w, {"mode", "width"}, "window.");
    if (w.contains("mode")) {
      std::string mode = w.at("mode").get<std::string>();
      if (mode == "first") {
        c.window.mode = WindowMode::Mode::first;
      } else if (mode == "surrounding") {
        c.window.mode = WindowMode::Mode::surrounding;
      } else {
        throw ValidationError("config: unknown key 'window.mode' value '" + mode + "'");
      }
    }
    maybe(w, "width", c.window.width);
  }
  c.train.seed = c.seed;
  return c;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: " + std::string(e.what()));
  }
}

// --set a.b.c=value overrides, value parsed as JSON when possible.
void apply_overrides(json& root, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config: --set expects key=value, got '" + kv + "'");
    }
    std::string path = kv.substr(0, eq);
    std::string raw = kv.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;  // plain string
    }
    json* node = &root;
    std::size_t start = 0;
    while (true) {
      std::size_t dot = path.find('.', start);
      std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
      if (key.empty()) throw ValidationError("config: bad --set path '" + path + "'");
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  json root = path.empty() ? json::object() : load_json_file(path);
  apply_overrides(root, sets);
  return parse_config(root);
}

std::string resolve_relative(const std::string& base_file, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_file).parent_path() / p).string();
}

struct LoadedData {
  std::vector<NewsExample> examples;
  bpe::BpeVocab vocab;
};

LoadedData load_data(const RunConfig& config, const std::string& data_path,
                     const std::string& config_path) {
  LoadedData d;
  d.examples = load_jsonl(data_path);
  std::string vocab_path = config.vocab_path;
  if (vocab_path.empty()) throw ValidationError("config: missing key 'vocab'");
  d.vocab = bpe::load_vocab(resolve_relative(config_path, vocab_path));
  return d;
}

std::vector<NewsExample> filter_split(const std::vector<NewsExample>& all, Split split) {
  std::vector<NewsExample> out;
  for (const NewsExample& e : all) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

TrainExample prepare_example(const NewsExample& e, const RunConfig& config,
                             const bpe::BpeVocab& vocab, const std::string& data_path) {
  TrainExample ex;
  ex.caption_ids = bpe::encode(e.caption_text, vocab);
  ex.context = load_context(resolve_relative(data_path, e.context_path), config.context);
  std::size_t n = ex.context.article_len();
  if (e.image_position >= static_cast<std::int64_t>(n)) {
    throw ValidationError("dataset: image_position " + std::to_string(e.image_position) +
                          " beyond article token count " + std::to_string(n) + " for id '" +
                          e.id + "'");
  }
  auto [begin, end] = select_context_window(n, e.image_position, config.window);
  ex.article_begin = begin;
  ex.article_end = end;
  return ex;
}

void require_matching(const char* field, std::size_t config_v, std::size_t ckpt_v) {
  if (config_v != ckpt_v) {
    throw ValidationError("checkpoint/config mismatch on '" + std::string(field) + "': config " +
                          std::to_string(config_v) + ", checkpoint " + std::to_string(ckpt_v));
  }
}

int cmd_bpe_train(const std::string& corpus_path, std::size_t vocab_size,
                  const std::string& out_path) {
  std::ifstream in(corpus_path);
  if (!in) throw ValidationError("bpe-train: cannot open corpus " + corpus_path);
  std::vector<std::string> corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) corpus.push_back(line);
  }
  bpe::BpeVocab vocab = bpe::train_merges(corpus, vocab_size);
  bpe::save_vocab(vocab, out_path);
  std::cout << "wrote " << vocab.merges().size() << " merges (vocabulary " << vocab.size()
            << ") to " << out_path << "\n";
  return kExitOk;
}

int cmd_synth_data(const std::string& out_dir, std::uint64_t seed, std::size_t n_train,
                   std::size_t n_valid, std::size_t n_test, std::size_t vocab_size) {
  fixtures::SynthDataConfig config;
  config.seed = seed;
  config.n_train = n_train;
  config.n_valid = n_valid;
  config.n_test = n_test;
  config.vocab_target = vocab_size;
  fixtures::SynthData data = fixtures::make_synth_data(config);
  fixtures::write_synth_data(data, out_dir);

  // Starter run configuration wired to the written files.
  json run = {
      {"seed", seed},
      {"vocab", "vocab.bpe"},
      {"context",
       {{"d_image", config.ctx.d_image},
        {"m_image", config.ctx.m_image},
        {"d_face", config.ctx.d_face},
        {"max_faces", config.ctx.max_faces},
        {"d_object", config.ctx.d_object},
        {"max_objects", config.ctx.max_objects},
        {"object_confidence_min", config.ctx.object_confidence_min},
        {"d_article", config.ctx.d_article},
        {"n_layers", config.ctx.n_layers}}},
      {"decoder",
       {{"d_model", 64},
        {"n_heads", 4},
        {"n_blocks", 2},
        {"kernel_sizes", {3, 7}},
        {"attention_scaling", true},
        {"max_positions", 64}}},
      {"clusters", {{"cutoffs", {200, 400, 400}}}},
      {"train", {{"peak_lr", 2e-3}, {"batch_size", 16}, {"total_steps", 2000}}},
      {"generate", {{"max_len", 20}, {"mode", "greedy"}, {"beam_size", 5}}},
      {"window", {{"mode", "first"}, {"width", 512}}},
  };
  std::ofstream cfg(fs::path(out_dir) / "config.json");
  cfg << run.dump(2) << "\n";
  std::cout << "wrote " << data.examples.size() << " examples and a " << data.vocab.size()
            << "-token vocabulary under " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, const std::string& log_path,
              const std::vector<std::string>& sets) {
  RunConfig config = load_config(config_path, sets);
  LoadedData data = load_data(config, data_path, config_path);
  std::vector<NewsExample> train_split = filter_split(data.examples, Split::train);
  if (train_split.empty()) throw ValidationError("train: no training examples in " + data_path);

  std::vector<TrainExample> examples;
  examples.reserve(train_split.size());
  for (const NewsExample& e : train_split) {
    examples.push_back(prepare_example(e, config, data.vocab, data_path));
  }
  CaptionModel model = CaptionModel::init(config.decoder, config.context, config.clusters,
                                          data.vocab.size(), config.seed);
  std::string log_file = log_path.empty() ? out_path + ".log.jsonl" : log_path;
  std::ofstream log(log_file);
  if (!log) throw ValidationError("train: cannot open log file " + log_file);
  TrainResult result = train(examples, model, config.train, &log);
  save_checkpoint(model, out_path);
  double final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  double accuracy = teacher_forced_accuracy(model, examples);
  std::cout << "trained " << result.steps_run << " steps; final loss " << final_loss
            << "; teacher-forced accuracy " << accuracy << "; checkpoint " << out_path << "\n";
  return kExitOk;
}

int cmd_generate(const std::string& config_path, const std::string& checkpoint_path,
                 const std::string& data_path, const std::string& out_path,
                 const std::string& mode, const std::string& split_name,
                 const std::vector<std::string>& sets) {
  RunConfig config = load_config(config_path, sets);
  if (!mode.empty()) {
    if (mode == "greedy") {
      config.generate.mode = GenConfig::Mode::greedy;
    } else if (mode == "beam") {
      config.generate.mode = GenConfig::Mode::beam;
    } else {
      throw ValidationError("generate: unknown mode '" + mode + "'");
    }
  }
  CaptionModel model = load_checkpoint(checkpoint_path);
  require_matching("d_model", config.decoder.d_model, model.config.d_model);
  require_matching("n_heads", config.decoder.n_heads, model.config.n_heads);
  require_matching("n_blocks", config.decoder.n_blocks, model.config.n_blocks);
  require_matching("d_image", config.context.d_image, model.ctx_spec.d_image);
  require_matching("m_image", config.context.m_image, model.ctx_spec.m_image);
  require_matching("d_face", config.context.d_face, model.ctx_spec.d_face);
  require_matching("d_object", config.context.d_object, model.ctx_spec.d_object);
  require_matching("d_article", config.context.d_article, model.ctx_spec.d_article);
  require_matching("n_layers", config.context.n_layers, model.ctx_spec.n_layers);

  LoadedData data = load_data(config, data_path, config_path);
  if (model.vocab_size != data.vocab.size()) {
    throw ValidationError("checkpoint/config mismatch on 'vocab_size': vocabulary " +
                          std::to_string(data.vocab.size()) + ", checkpoint " +
                          std::to_string(model.vocab_size));
  }
  std::vector<NewsExample> chosen =
      split_name == "all" ? data.examples : filter_split(data.examples, parse_split(split_name));

  std::vector<Prediction> predictions;
  predictions.reserve(chosen.size());
  for (const NewsExample& e : chosen) {
    TrainExample ex = prepare_example(e, config, data.vocab, data_path);
    GenResult r = config.generate.mode == GenConfig::Mode::greedy
                      ? generate_greedy(model, ex.context, ex.article_begin, ex.article_end,
                                        data.vocab, config.generate)
                      : generate_beam(model, ex.context, ex.article_begin, ex.article_end,
                                      data.vocab, config.generate);
    predictions.push_back(Prediction{e.id, r.caption, r.hypothesis.ids, r.hypothesis.logp});
  }
  save_predictions(predictions, out_path);
  std::cout << "wrote " << predictions.size() << " predictions to " << out_path << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& predictions_path, const std::string& data_path,
                 const std::string& out_path) {
  std::vector<Prediction> predictions = load_predictions(predictions_path);
  std::vector<NewsExample> examples = load_jsonl(data_path);
  std::vector<std::string> train_captions;
  for (const NewsExample& e : examples) {
    if (e.split == Split::train) train_captions.push_back(e.caption_text);
  }
  metrics::Report report = metrics::evaluate_run(predictions, examples, train_captions);
  metrics::save_report(report, out_path);
  std::cout << report.to_json() << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& break_check) {
  GradCheckOptions options;
  options.seed = seed;
  options.break_check = break_check;
  std::vector<GradCheckResult> results = run_gradcheck_suite(options);
  bool all_pass = true;
  for (const GradCheckResult& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_err=" << r.max_err
              << "  threshold=" << r.threshold << "\n";
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) {
    std::cout << "gradient check FAILED\n";
    return kExitRuntime;
  }
  std::cout << "gradient check passed (" << results.size() << " checks)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"newscap: entity-aware news caption decoder"};
  app.require_subcommand(1);

  std::string corpus, out, config_path, data_path, checkpoint, log_path, predictions;
  std::string mode, split_name = "test", break_check;
  std::size_t vocab_size = 1000, n_train = 32, n_valid = 4, n_test = 8;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;

  CLI::App* bpe_train = app.add_subcommand("bpe-train", "Train a BPE vocabulary");
  bpe_train->add_option("--corpus", corpus, "Text corpus, one document per line")->required();
  bpe_train->add_option("--vocab-size", vocab_size, "Target vocabulary size (>= 259)");
  bpe_train->add_option("--out", out, "Output vocabulary file")->required();

  CLI::App* synth = app.add_subcommand("synth-data", "Write a synthetic dataset");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--n-train", n_train, "Training examples");
  synth->add_option("--n-valid", n_valid, "Validation examples");
  synth->add_option("--n-test", n_test, "Test examples");
  synth->add_option("--vocab-size", vocab_size, "Vocabulary size");

  CLI::App* train_cmd = app.add_subcommand("train", "Train the caption decoder");
  train_cmd->add_option("--config", config_path, "Run configuration JSON")->required();
  train_cmd->add_option("--data", data_path, "Dataset JSONL")->required();
  train_cmd->add_option("--out", out, "Output checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "Metrics log path (default <out>.log.jsonl)");
  train_cmd->add_option("--set", sets, "Override config keys, e.g. --set train.peak_lr=1e-3");

  CLI::App* gen = app.add_subcommand("generate", "Generate captions");
  gen->add_option("--config", config_path, "Run configuration JSON")->required();
  gen->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  gen->add_option("--data", data_path, "Dataset JSONL")->required();
  gen->add_option("--out", out, "Predictions JSONL path")->required();
  gen->add_option("--mode", mode, "greedy or beam (defaults to config)");
  gen->add_option("--split", split_name, "train, valid, test, or all");
  gen->add_option("--set", sets, "Override config keys");

  CLI::App* eval = app.add_subcommand("evaluate", "Score predictions");
  eval->add_option("--predictions", predictions, "Predictions JSONL")->required();
  eval->add_option("--data", data_path, "Dataset JSONL")->required();
  eval->add_option("--out", out, "Report JSON path")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "Run the gradient-check suite");
  gc->add_option("--config", config_path, "Unused dims; the suite runs at fixed toy sizes");
  gc->add_option("--seed", seed, "Suite seed");
  gc->add_option("--test-break", break_check,
                 "Deliberately break one named check (test hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (bpe_train->parsed()) return cmd_bpe_train(corpus, vocab_size, out);
    if (synth->parsed()) return cmd_synth_data(out, seed, n_train, n_valid, n_test, vocab_size);
    if (train_cmd->parsed()) return cmd_train(config_path, data_path, out, log_path, sets);
    if (gen->parsed()) {
      return cmd_generate(config_path, checkpoint, data_path, out, mode, split_name, sets);
    }
    if (eval->parsed()) return cmd_evaluate(predictions, data_path, out);
    if (gc->parsed()) return cmd_gradcheck(seed, break_check);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
