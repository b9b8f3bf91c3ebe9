#pragma once

#include <string>

#include "newscap/decoder.hpp"

namespace newscap {

/// TNT1 checkpoint (little-endian): magic "TNT1"; decoder config as u32
/// fields (d_model, n_heads, n_blocks, kernel sizes, attention_scaling,
/// max_positions); context spec fields (u32 dims and caps, f32 confidence
/// floor); vocabulary size and output clusters; then u32 parameter count
/// followed by named sections, each u32 name length, name bytes, u32 rank,
/// u32 dims, f32 payload in visit order.
void save_checkpoint(CaptionModel& model, const std::string& path);
CaptionModel load_checkpoint(const std::string& path);

}  // namespace newscap
