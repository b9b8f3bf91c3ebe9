#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "newscap/errors.hpp"

namespace newscap {

enum class EntityLabel { person, gpe, org, date, other };
const char* entity_label_name(EntityLabel label);
EntityLabel parse_entity_label(const std::string& name);

/// A caption entity span, pre-annotated in the dataset. The surface string
/// must appear verbatim in the caption.
struct EntityMention {
  std::string surface;
  EntityLabel label = EntityLabel::other;

  bool operator==(const EntityMention&) const = default;
};

enum class Split { train, valid, test };
const char* split_name(Split split);
Split parse_split(const std::string& name);

/// One dataset record. image_position indexes the article token stream the
/// context file was built over (-1 when unknown); context_path points at the
/// precomputed CTX1 embeddings. date, when present, is an ISO-8601 string
/// used by temporal split validation.
struct NewsExample {
  std::string id;
  std::string article_text;
  std::string caption_text;
  std::int64_t image_position = -1;
  std::string context_path;
  std::vector<EntityMention> entities;
  Split split = Split::train;
  std::optional<std::string> date;

  bool operator==(const NewsExample&) const = default;
  void validate() const;
};

/// Article window policy: the first `width` tokens, or the `width` tokens
/// surrounding the image position.
struct WindowMode {
  enum class Mode { first, surrounding } mode = Mode::first;
  std::size_t width = 512;
};

/// Token index range [begin, end) of the selected article window. The
/// surrounding mode centers on the image position, clamps to the article,
/// and re-extends to the full width when the article allows; an unknown
/// position (-1) falls back to the first-tokens mode. The selected length is
/// always min(width, n_tokens).
std::pair<std::size_t, std::size_t> select_context_window(std::size_t n_tokens,
                                                          std::int64_t image_position,
                                                          const WindowMode& mode);

/// JSONL dataset file: one object per line with fields id, article, caption,
/// image_position, context, entities [{surface, label}], split, and
/// optionally date. Malformed lines report their line number; invariant
/// violations name the field.
std::vector<NewsExample> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<NewsExample>& examples, const std::string& path);

/// Split manifest: {"train": [ids], "valid": [ids], "test": [ids],
/// "temporal": bool}. With temporal set, every train date must precede every
/// test date.
struct SplitManifest {
  std::vector<std::string> train, valid, test;
  bool temporal = false;
};
SplitManifest load_split_manifest(const std::string& path);
void save_split_manifest(const SplitManifest& manifest, const std::string& path);

/// Cross-checks a manifest against examples: ids must resolve, and temporal
/// manifests must satisfy the date ordering.
void validate_split(const SplitManifest& manifest, const std::vector<NewsExample>& examples);

}  // namespace newscap
