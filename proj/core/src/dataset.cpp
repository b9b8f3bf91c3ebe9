#include "newscap/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <unordered_map>

#include "json.hpp"

namespace newscap {

using nlohmann::json;

const char* entity_label_name(EntityLabel label) {
  switch (label) {
    case EntityLabel::person: return "PERSON";
    case EntityLabel::gpe: return "GPE";
    case EntityLabel::org: return "ORG";
    case EntityLabel::date: return "DATE";
    case EntityLabel::other: return "OTHER";
  }
  return "?";
}

EntityLabel parse_entity_label(const std::string& name) {
  if (name == "PERSON") return EntityLabel::person;
  if (name == "GPE") return EntityLabel::gpe;
  if (name == "ORG") return EntityLabel::org;
  if (name == "DATE") return EntityLabel::date;
  if (name == "OTHER") return EntityLabel::other;
  throw ValidationError("dataset: unknown entity label '" + name + "'");
}

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw ValidationError("dataset: unknown split '" + name + "'");
}

void NewsExample::validate() const {
  if (id.empty()) throw ValidationError("dataset: field 'id' is empty");
  if (caption_text.empty()) {
    throw ValidationError("dataset: field 'caption' is empty for id '" + id + "'");
  }
  if (image_position < -1) {
    throw ValidationError("dataset: field 'image_position' below -1 for id '" + id + "'");
  }
  for (const EntityMention& e : entities) {
    if (e.surface.empty()) {
      throw ValidationError("dataset: field 'entities' holds an empty surface for id '" + id +
                            "'");
    }
    if (caption_text.find(e.surface) == std::string::npos) {
      throw ValidationError("dataset: entity '" + e.surface +
                            "' does not appear verbatim in the caption of id '" + id + "'");
    }
  }
}

std::pair<std::size_t, std::size_t> select_context_window(std::size_t n_tokens,
                                                          std::int64_t image_position,
                                                          const WindowMode& mode) {
  if (n_tokens == 0) return {0, 0};
  std::size_t width = std::max<std::size_t>(1, mode.width);
  if (width >= n_tokens) return {0, n_tokens};

  bool surrounding = mode.mode == WindowMode::Mode::surrounding && image_position >= 0;
  if (!surrounding) return {0, width};

  std::size_t p = static_cast<std::size_t>(std::min<std::int64_t>(
      image_position, static_cast<std::int64_t>(n_tokens) - 1));
  std::size_t half_low = width / 2;
  std::size_t begin = p > half_low ? p - half_low : 0;
  std::size_t end = begin + width;
  if (end > n_tokens) {
    // Clamped at the back: re-extend leftwards to keep the full width.
    end = n_tokens;
    begin = end - width;
  }
  return {begin, end};
}

namespace {

json example_to_json(const NewsExample& e) {
  json entities = json::array();
  for (const EntityMention& m : e.entities) {
    entities.push_back({{"surface", m.surface}, {"label", entity_label_name(m.label)}});
  }
  json obj = {{"id", e.id},
              {"article", e.article_text},
              {"caption", e.caption_text},
              {"image_position", e.image_position},
              {"context", e.context_path},
              {"entities", entities},
              {"split", split_name(e.split)}};
  if (e.date.has_value()) obj["date"] = *e.date;
  return obj;
}

NewsExample example_from_json(const json& obj, std::size_t lineno) {
  static const std::vector<std::string> known = {"id",      "article",  "caption", "image_position",
                                                 "context", "entities", "split",   "date"};
  auto require_field = [&obj, lineno](const char* name) {
    if (!obj.contains(name)) {
      throw ValidationError("dataset: line " + std::to_string(lineno) + " missing field '" +
                            name + "'");
    }
  };
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ValidationError("dataset: line " + std::to_string(lineno) + " has unknown field '" +
                            it.key() + "'");
    }
  }
  for (const char* f : {"id", "article", "caption", "image_position", "context", "entities",
                        "split"}) {
    require_field(f);
  }
  NewsExample e;
  try {
    e.id = obj.at("id").get<std::string>();
    e.article_text = obj.at("article").get<std::string>();
    e.caption_text = obj.at("caption").get<std::string>();
    e.image_position = obj.at("image_position").get<std::int64_t>();
    e.context_path = obj.at("context").get<std::string>();
    for (const json& ent : obj.at("entities")) {
      EntityMention m;
      m.surface = ent.at("surface").get<std::string>();
      m.label = parse_entity_label(ent.at("label").get<std::string>());
      e.entities.push_back(std::move(m));
    }
    e.split = parse_split(obj.at("split").get<std::string>());
    if (obj.contains("date")) e.date = obj.at("date").get<std::string>();
  } catch (const json::exception& err) {
    throw ValidationError("dataset: line " + std::to_string(lineno) + ": " + err.what());
  }
  e.validate();
  return e;
}

}  // namespace

std::vector<NewsExample> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("dataset: cannot open " + path);
  std::vector<NewsExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& err) {
      throw ParseError("dataset: line " + std::to_string(lineno) + ": " + err.what());
    }
    out.push_back(example_from_json(obj, lineno));
  }
  return out;
}

void save_jsonl(const std::vector<NewsExample>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("dataset: cannot open " + path + " for writing");
  for (const NewsExample& e : examples) {
    out << example_to_json(e).dump() << "\n";
  }
  if (!out) throw ParseError("dataset: write failed for " + path);
}

SplitManifest load_split_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("split manifest: cannot open " + path);
  json obj;
  try {
    obj = json::parse(in);
  } catch (const json::parse_error& err) {
    throw ParseError("split manifest: " + std::string(err.what()));
  }
  SplitManifest m;
  try {
    m.train = obj.at("train").get<std::vector<std::string>>();
    m.valid = obj.at("valid").get<std::vector<std::string>>();
    m.test = obj.at("test").get<std::vector<std::string>>();
    m.temporal = obj.at("temporal").get<bool>();
  } catch (const json::exception& err) {
    throw ValidationError("split manifest: " + std::string(err.what()));
  }
  return m;
}

void save_split_manifest(const SplitManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("split manifest: cannot open " + path + " for writing");
  json obj = {{"train", manifest.train},
              {"valid", manifest.valid},
              {"test", manifest.test},
              {"temporal", manifest.temporal}};
  out << obj.dump(2) << "\n";
}

void validate_split(const SplitManifest& manifest, const std::vector<NewsExample>& examples) {
  std::unordered_map<std::string, const NewsExample*> by_id;
  for (const NewsExample& e : examples) by_id[e.id] = &e;
  auto resolve = [&by_id](const std::vector<std::string>& ids, const char* which) {
    std::vector<const NewsExample*> out;
    for (const std::string& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw ValidationError("split manifest: " + std::string(which) + " id '" + id +
                              "' not in dataset");
      }
      out.push_back(it->second);
    }
    return out;
  };
  auto train = resolve(manifest.train, "train");
  resolve(manifest.valid, "valid");
  auto test = resolve(manifest.test, "test");
  if (!manifest.temporal) return;

  // ISO-8601 dates compare lexicographically.
  std::string max_train, min_test;
  for (const NewsExample* e : train) {
    if (!e->date.has_value()) {
      throw ValidationError("split manifest: temporal split but train id '" + e->id +
                            "' has no date");
    }
    max_train = std::max(max_train, *e->date);
  }
  for (const NewsExample* e : test) {
    if (!e->date.has_value()) {
      throw ValidationError("split manifest: temporal split but test id '" + e->id +
                            "' has no date");
    }
    if (min_test.empty()) min_test = *e->date;
    min_test = std::min(min_test, *e->date);
  }
  if (!train.empty() && !test.empty() && !(max_train < min_test)) {
    throw ValidationError("split manifest: temporal split violated, train date '" + max_train +
                          "' not before test date '" + min_test + "'");
  }
}

}  // namespace newscap
