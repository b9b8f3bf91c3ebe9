#include "newscap/checkpoint.hpp"

#include <map>

#include "binary_io.hpp"

namespace newscap {

using detail::BinaryReader;
using detail::BinaryWriter;

void save_checkpoint(CaptionModel& model, const std::string& path) {
  model.validate();
  BinaryWriter w(path);
  w.magic("TNT1");
  const DecoderConfig& c = model.config;
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.n_blocks));
  for (std::size_t k : c.kernel_sizes) w.u32(static_cast<std::uint32_t>(k));
  w.u32(c.attention_scaling ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(c.max_positions));

  const ContextSpec& s = model.ctx_spec;
  w.u32(static_cast<std::uint32_t>(s.d_image));
  w.u32(static_cast<std::uint32_t>(s.m_image));
  w.u32(static_cast<std::uint32_t>(s.d_face));
  w.u32(static_cast<std::uint32_t>(s.max_faces));
  w.u32(static_cast<std::uint32_t>(s.d_object));
  w.u32(static_cast<std::uint32_t>(s.max_objects));
  w.f32(s.object_confidence_min);
  w.u32(static_cast<std::uint32_t>(s.d_article));
  w.u32(static_cast<std::uint32_t>(s.n_layers));

  w.u32(static_cast<std::uint32_t>(model.vocab_size));
  w.u32(static_cast<std::uint32_t>(model.clusters.cutoffs.size()));
  for (std::size_t v : model.clusters.cutoffs) w.u32(static_cast<std::uint32_t>(v));
  for (std::size_t v : model.clusters.tail_divisors) w.u32(static_cast<std::uint32_t>(v));

  std::size_t n_params = 0;
  model.visit_params([&n_params](const std::string&, Tensor&) { ++n_params; });
  w.u32(static_cast<std::uint32_t>(n_params));
  model.visit_params([&w](const std::string& name, Tensor& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f32(v);
  });
  w.done();
}

CaptionModel load_checkpoint(const std::string& path) {
  BinaryReader r(path, "checkpoint");
  r.expect_magic("TNT1");
  DecoderConfig c;
  c.d_model = r.u32("d_model");
  c.n_heads = r.u32("n_heads");
  c.n_blocks = r.u32("n_blocks");
  c.kernel_sizes.clear();
  for (std::size_t b = 0; b < c.n_blocks; ++b) c.kernel_sizes.push_back(r.u32("kernel size"));
  c.attention_scaling = r.u32("attention_scaling") != 0;
  c.max_positions = r.u32("max_positions");

  ContextSpec s;
  s.d_image = r.u32("d_image");
  s.m_image = r.u32("m_image");
  s.d_face = r.u32("d_face");
  s.max_faces = r.u32("max_faces");
  s.d_object = r.u32("d_object");
  s.max_objects = r.u32("max_objects");
  s.object_confidence_min = r.f32("object_confidence_min");
  s.d_article = r.u32("d_article");
  s.n_layers = r.u32("n_layers");

  std::size_t vocab = r.u32("vocab_size");
  std::size_t n_clusters = r.u32("cluster count");
  ClusterSpec clusters;
  for (std::size_t i = 0; i < n_clusters; ++i) clusters.cutoffs.push_back(r.u32("cluster size"));
  for (std::size_t i = 0; i + 1 < n_clusters; ++i) {
    clusters.tail_divisors.push_back(r.u32("tail divisor"));
  }

  CaptionModel model = CaptionModel::init(c, s, clusters, vocab, /*seed=*/0);
  std::map<std::string, Tensor*> by_name;
  model.visit_params([&by_name](const std::string& name, Tensor& t) { by_name[name] = &t; });

  std::size_t n_params = r.u32("parameter count");
  if (n_params != by_name.size()) {
    throw ParseError("checkpoint: holds " + std::to_string(n_params) + " parameters, model has " +
                     std::to_string(by_name.size()));
  }
  for (std::size_t p = 0; p < n_params; ++p) {
    std::size_t name_len = r.u32("parameter name length");
    std::string name = r.str(name_len, "parameter name");
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ParseError("checkpoint: unknown parameter '" + name + "'");
    }
    Tensor& t = *it->second;
    std::size_t rank = r.u32("parameter rank");
    std::vector<std::size_t> dims;
    for (std::size_t d = 0; d < rank; ++d) dims.push_back(r.u32("parameter dim"));
    if (dims != t.shape()) {
      Tensor probe(dims);
      throw ValidationError("checkpoint: parameter '" + name + "' has shape " +
                            probe.shape_str() + ", model expects " + t.shape_str());
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.f32("parameter payload");
    t.ensure_finite("checkpoint parameter " + name);
  }
  r.expect_end();
  model.validate();
  return model;
}

}  // namespace newscap
