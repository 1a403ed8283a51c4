#include "fieldflow/velocity_model.hpp"

#include <cstring>
#include <sstream>

namespace fieldflow {

std::string to_string(ProcessorKind v) {
  return v == ProcessorKind::none ? "none" : "small_mlp_mixer";
}

std::string to_string(EncoderAttention v) {
  return v == EncoderAttention::cross_fixed_kv ? "cross_fixed_kv"
                                               : "self_attention";
}

std::string to_string(DecoderQuery v) {
  return v == DecoderQuery::function_plus_position ? "function_plus_position"
                                                   : "position_only";
}

ProcessorKind processor_from_string(const std::string& s) {
  if (s == "none") return ProcessorKind::none;
  if (s == "small_mlp_mixer") return ProcessorKind::small_mlp_mixer;
  throw std::invalid_argument("unknown processor kind '" + s + "'");
}

EncoderAttention encoder_attention_from_string(const std::string& s) {
  if (s == "cross_fixed_kv") return EncoderAttention::cross_fixed_kv;
  if (s == "self_attention") return EncoderAttention::self_attention;
  throw std::invalid_argument("unknown encoder attention mode '" + s + "'");
}

DecoderQuery decoder_query_from_string(const std::string& s) {
  if (s == "function_plus_position") return DecoderQuery::function_plus_position;
  if (s == "position_only") return DecoderQuery::position_only;
  throw std::invalid_argument("unknown decoder query mode '" + s + "'");
}

std::string to_string(LiftCombine v) {
  return v == LiftCombine::add ? "add" : "concat";
}

LiftCombine lift_combine_from_string(const std::string& s) {
  if (s == "add") return LiftCombine::add;
  if (s == "concat") return LiftCombine::concat;
  throw std::invalid_argument("unknown lift combine mode '" + s + "'");
}

void validate(const ModelConfig& cfg) {
  if (cfg.l_dim <= 0) throw std::invalid_argument("model: l_dim must be positive");
  if (cfg.heads <= 0 || cfg.l_dim % cfg.heads != 0)
    throw std::invalid_argument("model: l_dim must be divisible by heads");
  if (cfg.m1 < 1 || cfg.m2 < 1)
    throw std::invalid_argument("model: m1 and m2 must be at least 1");
  if (cfg.radius <= 0) throw std::invalid_argument("model: radius must be positive");
  if (cfg.f_dim <= 0) throw std::invalid_argument("model: f_dim must be positive");
  if (cfg.pos_embed_dim < 2 || cfg.pos_embed_dim % 2 != 0)
    throw std::invalid_argument("model: pos_embed_dim must be a positive even number");
  if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
    throw std::invalid_argument("model: time_embed_dim must be a positive even number");
  if (cfg.gno_hidden <= 0)
    throw std::invalid_argument("model: gno_hidden must be positive");
  if (cfg.mixer_blocks < 1)
    throw std::invalid_argument("model: mixer_blocks must be at least 1");
  if (cfg.latent_grid.kind == GridKind::regular) {
    if (cfg.latent_grid.lower.size() != cfg.latent_grid.upper.size())
      throw std::invalid_argument("model: latent grid bounds dimension mismatch");
    if (cfg.latent_grid.nx < 1 || cfg.latent_grid.ny < 1)
      throw std::invalid_argument("model: latent grid shape must be positive");
  } else if (cfg.latent_grid.n_lon < 1 || cfg.latent_grid.n_lat < 1) {
    throw std::invalid_argument("model: latent grid shape must be positive");
  }
  cfg.latent_grid.build();
}

void config_to_kv(const ModelConfig& cfg, KvDoc& doc) {
  doc.set_int("model.l_dim", cfg.l_dim);
  doc.set_int("model.m1", cfg.m1);
  doc.set_int("model.m2", cfg.m2);
  doc.set_int("model.heads", cfg.heads);
  doc.set_real("model.radius", cfg.radius);
  doc.set_int("model.pos_embed_dim", cfg.pos_embed_dim);
  doc.set_int("model.time_embed_dim", cfg.time_embed_dim);
  doc.set_int("model.f_dim", cfg.f_dim);
  doc.set_int("model.gno_hidden", cfg.gno_hidden);
  doc.set_int("model.mixer_blocks", cfg.mixer_blocks);
  doc.set("model.processor", to_string(cfg.processor));
  doc.set("model.encoder_attention", to_string(cfg.encoder_attention));
  doc.set("model.decoder_query", to_string(cfg.decoder_query));
  doc.set("model.lift_combine", to_string(cfg.lift_combine));
  const LatentGridSpec& g = cfg.latent_grid;
  doc.set("model.grid.kind",
          g.kind == GridKind::regular ? "regular" : "spherical");
  if (g.kind == GridKind::regular) {
    doc.set_int("model.grid.nx", g.nx);
    doc.set_int("model.grid.ny", g.ny);
    doc.set_reals("model.grid.lower",
                  std::vector<double>(g.lower.data(), g.lower.data() + g.lower.size()));
    doc.set_reals("model.grid.upper",
                  std::vector<double>(g.upper.data(), g.upper.data() + g.upper.size()));
  } else {
    doc.set_int("model.grid.n_lon", g.n_lon);
    doc.set_int("model.grid.n_lat", g.n_lat);
  }
}

ModelConfig config_from_kv(const KvDoc& doc) {
  ModelConfig cfg;
  cfg.l_dim = static_cast<int>(doc.get_int("model.l_dim"));
  cfg.m1 = static_cast<int>(doc.get_int("model.m1"));
  cfg.m2 = static_cast<int>(doc.get_int("model.m2"));
  cfg.heads = static_cast<int>(doc.get_int("model.heads"));
  cfg.radius = doc.get_real("model.radius");
  cfg.pos_embed_dim = static_cast<int>(doc.get_int("model.pos_embed_dim"));
  cfg.time_embed_dim = static_cast<int>(doc.get_int("model.time_embed_dim"));
  cfg.f_dim = static_cast<int>(doc.get_int("model.f_dim"));
  cfg.gno_hidden = static_cast<int>(doc.get_int("model.gno_hidden"));
  cfg.mixer_blocks = static_cast<int>(doc.get_int("model.mixer_blocks"));
  cfg.processor = processor_from_string(doc.get("model.processor"));
  cfg.encoder_attention =
      encoder_attention_from_string(doc.get("model.encoder_attention"));
  cfg.decoder_query = decoder_query_from_string(doc.get("model.decoder_query"));
  if (doc.has("model.lift_combine"))
    cfg.lift_combine = lift_combine_from_string(doc.get("model.lift_combine"));
  const std::string kind = doc.get("model.grid.kind");
  if (kind == "regular") {
    cfg.latent_grid.kind = GridKind::regular;
    cfg.latent_grid.nx = static_cast<int>(doc.get_int("model.grid.nx"));
    cfg.latent_grid.ny = static_cast<int>(doc.get_int("model.grid.ny"));
    const std::vector<double> lo = doc.get_reals("model.grid.lower");
    const std::vector<double> hi = doc.get_reals("model.grid.upper");
    cfg.latent_grid.lower =
        Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    cfg.latent_grid.upper =
        Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  } else if (kind == "spherical") {
    cfg.latent_grid.kind = GridKind::spherical_lat_lon;
    cfg.latent_grid.n_lon = static_cast<int>(doc.get_int("model.grid.n_lon"));
    cfg.latent_grid.n_lat = static_cast<int>(doc.get_int("model.grid.n_lat"));
  } else {
    throw std::invalid_argument("unknown latent grid kind '" + kind + "'");
  }
  validate(cfg);
  return cfg;
}

std::uint64_t point_set_content_hash(const PointSet& points) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const std::int64_t n = points.positions.rows();
  const std::int64_t d = points.positions.cols();
  mix(&n, sizeof(n));
  mix(&d, sizeof(d));
  mix(points.positions.data(),
      static_cast<std::size_t>(points.positions.size()) * sizeof(double));
  return h;
}

KvDoc read_checkpoint_header(std::istream& in, const std::string& path) {
  unsigned char lenb[4];
  in.read(reinterpret_cast<char*>(lenb), 4);
  if (in.gcount() != 4)
    throw std::runtime_error("checkpoint " + path + ": missing header length");
  const std::uint32_t len = static_cast<std::uint32_t>(lenb[0]) |
                            (static_cast<std::uint32_t>(lenb[1]) << 8) |
                            (static_cast<std::uint32_t>(lenb[2]) << 16) |
                            (static_cast<std::uint32_t>(lenb[3]) << 24);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len))
    throw std::runtime_error("checkpoint " + path + ": truncated header");
  KvDoc doc = KvDoc::parse(header);
  if (!doc.has("format") || doc.get("format") != kCheckpointMagic)
    throw std::runtime_error("checkpoint " + path + ": wrong format marker");
  if (doc.get_int("version") != 1)
    throw std::runtime_error("checkpoint " + path + ": unsupported version");
  return doc;
}

}  // namespace fieldflow
