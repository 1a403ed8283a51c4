#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fieldflow/geometry.hpp"
#include "fieldflow/kvtext.hpp"
#include "fieldflow/layers.hpp"
#include "fieldflow/rng.hpp"
#include "fieldflow/tape.hpp"

namespace fieldflow {

enum class ProcessorKind { none, small_mlp_mixer };
enum class EncoderAttention { cross_fixed_kv, self_attention };
enum class DecoderQuery { function_plus_position, position_only };
enum class LiftCombine { add, concat };

struct LatentGridSpec {
  GridKind kind = GridKind::regular;
  int nx = 16, ny = 16;
  int n_lon = 32, n_lat = 16;
  Eigen::VectorXd lower = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd upper = Eigen::VectorXd::Ones(2);

  LatentGrid build() const {
    if (kind == GridKind::regular)
      return make_regular_grid(nx, ny, Domain::box(lower, upper));
    return make_spherical_grid(n_lon, n_lat);
  }
  int p_dim() const {
    return kind == GridKind::regular ? static_cast<int>(lower.size()) : 3;
  }
  int n_node() const {
    return kind == GridKind::regular ? nx * ny : n_lon * n_lat;
  }
};

struct ModelConfig {
  int l_dim = 256;
  int m1 = 5;
  int m2 = 2;
  int heads = 4;
  double radius = 0.07;
  LatentGridSpec latent_grid;
  int pos_embed_dim = 32;   // per coordinate
  int time_embed_dim = 64;
  int f_dim = 1;
  int gno_hidden = 64;
  int mixer_blocks = 2;
  ProcessorKind processor = ProcessorKind::none;
  EncoderAttention encoder_attention = EncoderAttention::cross_fixed_kv;
  DecoderQuery decoder_query = DecoderQuery::function_plus_position;
  LiftCombine lift_combine = LiftCombine::add;

  int p_dim() const { return latent_grid.p_dim(); }
  int pos_embed_total() const { return p_dim() * pos_embed_dim; }
};

void validate(const ModelConfig& cfg);
void config_to_kv(const ModelConfig& cfg, KvDoc& doc);
ModelConfig config_from_kv(const KvDoc& doc);

std::string to_string(ProcessorKind v);
std::string to_string(EncoderAttention v);
std::string to_string(DecoderQuery v);
std::string to_string(LiftCombine v);
ProcessorKind processor_from_string(const std::string& s);
EncoderAttention encoder_attention_from_string(const std::string& s);
DecoderQuery decoder_query_from_string(const std::string& s);
LiftCombine lift_combine_from_string(const std::string& s);

std::uint64_t point_set_content_hash(const PointSet& points);

// Velocity-field operator v(f_t, t) on arbitrary discretizations: sinusoidal
// position/time embeddings, a GNO encoder onto the fixed latent grid, M1
// conditioned cross-attention blocks with the GNO output as fixed KV, an
// optional latent token-mixing processor, and an M2-block cross-attention
// decoder queried by the input function and its positions.
template <typename Scalar>
class VelocityModel {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using T = Tensor<Scalar>;

  // Per-mesh constants reused across training steps and solver stages.
  struct MeshContext {
    EdgeList edges;
    Mat p_emb;      // [pos_embed_total, N]
    Mat pos_feat;   // [2 * p_dim, E] kernel MLP position features
    std::vector<std::int32_t> qidx, iidx;
  };

  ModelConfig config;
  ParamStore<Scalar> params;

  explicit VelocityModel(const ModelConfig& cfg, std::uint64_t init_seed = 0)
      : config(cfg) {
    validate(cfg);
    grid_ = cfg.latent_grid.build();
    const Eigen::Index L = cfg.l_dim;
    const Eigen::Index pe = cfg.pos_embed_total();
    t_mlp_ = MlpLayer<Scalar>(params, "time_mlp",
                              {cfg.time_embed_dim, L, L}, Activation::silu);
    lift_ = LinearLayer<Scalar>(params, "lift", cfg.f_dim, pe);
    const Eigen::Index gno_in =
        cfg.lift_combine == LiftCombine::add ? pe : 2 * pe;
    gno_ = GnoLayer<Scalar>(params, "gno", cfg.p_dim(), gno_in, cfg.gno_hidden,
                            L);
    enc_proj_ = LinearLayer<Scalar>(params, "enc_proj", L, L);
    for (int j = 0; j < cfg.m1; ++j)
      enc_blocks_.emplace_back(params, "enc" + std::to_string(j), L, cfg.heads);
    if (cfg.processor == ProcessorKind::small_mlp_mixer)
      for (int j = 0; j < cfg.mixer_blocks; ++j)
        mixer_blocks_.emplace_back(params, "mix" + std::to_string(j), L,
                                   grid_.size());
    if (cfg.decoder_query == DecoderQuery::function_plus_position) {
      dec_f_mlp_ = MlpLayer<Scalar>(params, "dec_f_mlp", {cfg.f_dim, pe, pe},
                                    Activation::gelu);
      dec_q_mlp_ = MlpLayer<Scalar>(params, "dec_q_mlp", {2 * pe, L, L},
                                    Activation::gelu);
    } else {
      dec_q_mlp_ = MlpLayer<Scalar>(params, "dec_q_mlp", {pe, L, L},
                                    Activation::gelu);
    }
    for (int j = 0; j < cfg.m2; ++j)
      dec_blocks_.emplace_back(params, "dec" + std::to_string(j), L, cfg.heads);
    out_norm_ = LayerNormLayer<Scalar>(params, "out_norm", L);
    out_linear_ = LinearLayer<Scalar>(params, "out_linear", L, cfg.f_dim, true);
    params.finalize();
    init(init_seed);
  }

  void init(std::uint64_t seed) {
    params.init_params(seed);
    out_norm_.reset_gain(params);
  }

  const LatentGrid& latent_grid() const { return grid_; }

  const MeshContext& mesh_context(const PointSet& pos) {
    if (pos.size() == 0)
      throw std::invalid_argument("VelocityModel: empty point set");
    if (pos.dim() != config.p_dim())
      throw std::invalid_argument("VelocityModel: point dimension mismatch");
    const std::uint64_t key = point_set_content_hash(pos);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;

    MeshContext ctx;
    ctx.edges = build_radius_graph(pos, grid_, config.radius);
    ctx.p_emb = sinusoidal_embed(pos.positions, config.pos_embed_dim)
                    .template cast<Scalar>();
    const Eigen::Index E = ctx.edges.pairs.rows();
    const int p = pos.dim();
    ctx.pos_feat.resize(2 * p, E);
    ctx.qidx.resize(static_cast<std::size_t>(E));
    ctx.iidx.resize(static_cast<std::size_t>(E));
    for (Eigen::Index e = 0; e < E; ++e) {
      const std::int32_t q = ctx.edges.pairs(e, 0);
      const std::int32_t i = ctx.edges.pairs(e, 1);
      ctx.qidx[static_cast<std::size_t>(e)] = q;
      ctx.iidx[static_cast<std::size_t>(e)] = i;
      ctx.pos_feat.col(e).head(p) =
          grid_.query_positions.row(q).transpose().template cast<Scalar>();
      ctx.pos_feat.col(e).tail(p) =
          pos.positions.row(i).transpose().template cast<Scalar>();
    }
    return cache_.emplace(key, std::move(ctx)).first->second;
  }

  // Conditioning features t_feat = MLP(Emb(t)), shape [L_dim, 1].
  T time_features(Tape<Scalar>& tape, double t) {
    if (t < -1e-9 || t > 1 + 1e-9)
      throw std::invalid_argument("VelocityModel: t must lie in [0, 1]");
    Eigen::MatrixXd tv(1, 1);
    tv(0, 0) = t;
    Mat emb = sinusoidal_embed(tv, config.time_embed_dim).template cast<Scalar>();
    return t_mlp_.forward(tape, params, tape.constant(std::move(emb)));
  }

  // Encoder: GNO(lift(f_t) + p_emb) projected to h_0, then M1 attention
  // blocks with fixed KV = h_0 (or chained KV under the self-attention
  // variant). Output is always [L_dim, N_node].
  T encode(Tape<Scalar>& tape, const Mat& f_t, const MeshContext& ctx,
           T t_feat) {
    const Eigen::Index n = ctx.p_emb.cols();
    if (f_t.rows() != config.f_dim || f_t.cols() != n)
      throw std::invalid_argument("VelocityModel::encode: f_t shape mismatch");
    auto x = lift_.forward(tape, params, tape.constant(f_t));
    x = config.lift_combine == LiftCombine::add
            ? tape.add(x, tape.constant(ctx.p_emb))
            : tape.vcat(x, tape.constant(ctx.p_emb));
    auto gathered = tape.gather_cols(x, ctx.iidx);
    auto feat = tape.vcat(tape.constant(ctx.pos_feat), gathered);
    auto messages = gno_kernel_forward(tape, feat);
    auto f_e = tape.segment_mean_cols(messages, ctx.qidx, grid_.size());
    auto h0 = enc_proj_.forward(tape, params, f_e);
    auto h = h0;
    for (const auto& block : enc_blocks_) {
      auto kv = config.encoder_attention == EncoderAttention::cross_fixed_kv
                    ? h0
                    : h;
      h = block.forward(tape, params, h, kv, t_feat);
    }
    return h;
  }

  // Optional latent processor; identity when disabled. Output shape equals
  // input shape either way.
  T process(Tape<Scalar>& tape, T h, T t_feat) {
    if (config.processor == ProcessorKind::none) return h;
    for (const auto& block : mixer_blocks_)
      h = block.forward(tape, params, h, t_feat);
    return h;
  }

  // Decoder: queries built from the input function and its positions (or
  // positions alone under the ablation), KV chained from the latent state,
  // finished by LayerNorm + Linear.
  T decode(Tape<Scalar>& tape, const Mat& f_t, const MeshContext& ctx,
           T h_latent, T t_feat) {
    T query;
    if (config.decoder_query == DecoderQuery::function_plus_position) {
      auto fm = dec_f_mlp_.forward(tape, params, tape.constant(f_t));
      auto cat = tape.vcat(fm, tape.constant(ctx.p_emb));
      query = dec_q_mlp_.forward(tape, params, cat);
    } else {
      query = dec_q_mlp_.forward(tape, params, tape.constant(ctx.p_emb));
    }
    auto h = h_latent;
    for (const auto& block : dec_blocks_)
      h = block.forward(tape, params, query, h, t_feat);
    auto y = out_norm_.forward(tape, params, h);
    return out_linear_.forward(tape, params, y);
  }

  // Full differentiable forward pass v(f_t, t) recorded on the given tape.
  T forward(Tape<Scalar>& tape, const Mat& f_t, const PointSet& pos, double t) {
    const MeshContext& ctx = mesh_context(pos);
    auto t_feat = time_features(tape, t);
    auto h = encode(tape, f_t, ctx, t_feat);
    h = process(tape, h, t_feat);
    return decode(tape, f_t, ctx, h, t_feat);
  }

  // Plain evaluation without gradient bookkeeping kept around.
  Mat velocity(const Mat& f_t, const PointSet& pos, double t) {
    Tape<Scalar> tape;
    auto v = forward(tape, f_t, pos, t);
    return tape.val(v);
  }

 private:
  // The GNO kernel MLP applied to prebuilt edge features.
  T gno_kernel_forward(Tape<Scalar>& tape, T feat) {
    return gno_.kernel.forward(tape, params, feat);
  }

  LatentGrid grid_;
  MlpLayer<Scalar> t_mlp_;
  LinearLayer<Scalar> lift_;
  GnoLayer<Scalar> gno_;
  LinearLayer<Scalar> enc_proj_;
  std::vector<MhcaBlock<Scalar>> enc_blocks_;
  std::vector<MixerBlock<Scalar>> mixer_blocks_;
  MlpLayer<Scalar> dec_f_mlp_;
  MlpLayer<Scalar> dec_q_mlp_;
  std::vector<MhcaBlock<Scalar>> dec_blocks_;
  LayerNormLayer<Scalar> out_norm_;
  LinearLayer<Scalar> out_linear_;
  std::unordered_map<std::uint64_t, MeshContext> cache_;
};

inline const char* kCheckpointMagic = "fieldflow-checkpoint";

// Header (format, version, config, parameter count) as key-value text,
// preceded by its little-endian u32 byte length, followed by the flat
// parameter vector as little-endian 32-bit reals. Round-trips byte-exactly
// for single-precision models.
template <typename Scalar>
void save_checkpoint(const std::string& path, const VelocityModel<Scalar>& model) {
  KvDoc doc;
  doc.set("format", kCheckpointMagic);
  doc.set_int("version", 1);
  config_to_kv(model.config, doc);
  doc.set_int("param_count", model.params.size());
  const std::string header = doc.serialize();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(header.size());
  char lenb[4] = {static_cast<char>(len & 0xff),
                  static_cast<char>((len >> 8) & 0xff),
                  static_cast<char>((len >> 16) & 0xff),
                  static_cast<char>((len >> 24) & 0xff)};
  out.write(lenb, 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<float> flat(static_cast<std::size_t>(model.params.size()));
  for (Eigen::Index i = 0; i < model.params.size(); ++i)
    flat[static_cast<std::size_t>(i)] = static_cast<float>(model.params.values[i]);
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

KvDoc read_checkpoint_header(std::istream& in, const std::string& path);

template <typename Scalar>
VelocityModel<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  KvDoc doc = read_checkpoint_header(in, path);
  VelocityModel<Scalar> model(config_from_kv(doc));
  const Eigen::Index count = doc.get_int("param_count");
  if (count != model.params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch in " +
                             path);
  std::vector<float> flat(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(flat.size() * sizeof(float)))
    throw std::runtime_error("load_checkpoint: truncated parameter blob in " +
                             path);
  for (Eigen::Index i = 0; i < count; ++i)
    model.params.values[i] = static_cast<Scalar>(flat[static_cast<std::size_t>(i)]);
  return model;
}

}  // namespace fieldflow
