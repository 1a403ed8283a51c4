#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "fieldflow/geometry.hpp"
#include "fieldflow/tape.hpp"

namespace fieldflow {

// y = W x + b columnwise; W is [C_out, C_in].
template <typename Scalar>
struct LinearLayer {
  int w = -1, b = -1;
  Eigen::Index in = 0, out = 0;

  LinearLayer() = default;
  LinearLayer(ParamStore<Scalar>& store, const std::string& name,
              Eigen::Index c_in, Eigen::Index c_out, bool zero_init = false)
      : in(c_in), out(c_out) {
    using Init = typename ParamStore<Scalar>::Init;
    w = store.add(name + ".w", c_out, c_in,
                  zero_init ? Init::zeros : Init::fan_in_uniform);
    b = store.add(name + ".b", c_out, 1, Init::zeros);
  }

  Tensor<Scalar> forward(Tape<Scalar>& tape, ParamStore<Scalar>& store,
                         Tensor<Scalar> x) const {
    if (x.rows() != in)
      throw std::invalid_argument("LinearLayer: input channel mismatch");
    auto y = tape.matmul(tape.param(store, w), x);
    return tape.add_colvec(y, tape.param(store, b));
  }
};

enum class Activation { gelu, silu };

// Linear -> activation -> ... -> Linear over the listed widths.
template <typename Scalar>
struct MlpLayer {
  std::vector<LinearLayer<Scalar>> linears;
  Activation act = Activation::gelu;

  MlpLayer() = default;
  MlpLayer(ParamStore<Scalar>& store, const std::string& name,
           const std::vector<Eigen::Index>& widths, Activation activation,
           bool zero_init_last = false)
      : act(activation) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      linears.emplace_back(store, name + ".l" + std::to_string(i), widths[i],
                           widths[i + 1], last && zero_init_last);
    }
  }

  Tensor<Scalar> forward(Tape<Scalar>& tape, ParamStore<Scalar>& store,
                         Tensor<Scalar> x) const {
    for (std::size_t i = 0; i < linears.size(); ++i) {
      x = linears[i].forward(tape, store, x);
      if (i + 1 < linears.size())
        x = act == Activation::gelu ? tape.gelu(x) : tape.silu(x);
    }
    return x;
  }
};

// Standard layer normalization with learned gain and bias.
template <typename Scalar>
struct LayerNormLayer {
  int gain = -1, bias = -1;
  Eigen::Index dim = 0;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<Scalar>& store, const std::string& name,
                 Eigen::Index c)
      : dim(c) {
    using Init = typename ParamStore<Scalar>::Init;
    gain = store.add(name + ".gain", c, 1, Init::zeros);
    bias = store.add(name + ".bias", c, 1, Init::zeros);
  }

  // Gains start at one; ParamStore::init_params writes zeros for Init::zeros
  // slices, so the model applies this correction after initialization.
  void reset_gain(ParamStore<Scalar>& store) const {
    store.slice(gain).setOnes();
  }

  Tensor<Scalar> forward(Tape<Scalar>& tape, ParamStore<Scalar>& store,
                         Tensor<Scalar> x) const {
    auto y = tape.layer_norm_raw(x);
    y = tape.mul_colvec(y, tape.param(store, gain));
    return tape.add_colvec(y, tape.param(store, bias));
  }
};

// Diagnostics captured by the attention block when requested: one softmax
// matrix [S_q, S_kv] per head.
template <typename Scalar>
struct MhcaDiag {
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> attention;
};

// Pre-norm multi-head cross-attention block with conditioning-modulated
// layer norms and zero-initialized gates:
//
//   (shift1, scale1, gate1, shift2, scale2, gate2) = W_c silu(cond) + b_c
//   xn = LN(q_in) * (1 + scale1) + shift1
//   attn = W_o multihead(W_q xn, W_k kv, W_v kv) + b_o
//   x1 = q_in + gate1 * attn
//   y  = x1 + gate2 * MLP(LN(x1) * (1 + scale2) + shift2)
//
// With freshly initialized gates the block is the identity on q_in.
template <typename Scalar>
struct MhcaBlock {
  Eigen::Index l_dim = 0;
  int heads = 1;
  LinearLayer<Scalar> wq, wk, wv, wo, cond_proj;
  MlpLayer<Scalar> mlp;

  MhcaBlock() = default;
  MhcaBlock(ParamStore<Scalar>& store, const std::string& name,
            Eigen::Index l, int n_heads)
      : l_dim(l), heads(n_heads) {
    if (l % n_heads != 0)
      throw std::invalid_argument("MhcaBlock: L_dim must be divisible by heads");
    wq = LinearLayer<Scalar>(store, name + ".wq", l, l);
    wk = LinearLayer<Scalar>(store, name + ".wk", l, l);
    wv = LinearLayer<Scalar>(store, name + ".wv", l, l);
    wo = LinearLayer<Scalar>(store, name + ".wo", l, l);
    cond_proj = LinearLayer<Scalar>(store, name + ".cond", l, 6 * l, true);
    mlp = MlpLayer<Scalar>(store, name + ".mlp", {l, 4 * l, l}, Activation::gelu);
  }

  Tensor<Scalar> forward(Tape<Scalar>& tape, ParamStore<Scalar>& store,
                         Tensor<Scalar> q_in, Tensor<Scalar> kv,
                         Tensor<Scalar> cond,
                         MhcaDiag<Scalar>* diag = nullptr) const {
    if (q_in.rows() != l_dim || kv.rows() != l_dim)
      throw std::invalid_argument("MhcaBlock: channel width mismatch");
    auto mod = cond_proj.forward(tape, store, tape.silu(cond));
    auto shift1 = tape.rows(mod, 0, l_dim);
    auto scale1 = tape.rows(mod, l_dim, l_dim);
    auto gate1 = tape.rows(mod, 2 * l_dim, l_dim);
    auto shift2 = tape.rows(mod, 3 * l_dim, l_dim);
    auto scale2 = tape.rows(mod, 4 * l_dim, l_dim);
    auto gate2 = tape.rows(mod, 5 * l_dim, l_dim);

    auto xn = tape.layer_norm_raw(q_in);
    xn = tape.mul_colvec(xn, tape.add_scalar(scale1, Scalar(1)));
    xn = tape.add_colvec(xn, shift1);

    auto q = wq.forward(tape, store, xn);
    auto k = wk.forward(tape, store, kv);
    auto v = wv.forward(tape, store, kv);

    const Eigen::Index dh = l_dim / heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<double>(dh));
    Tensor<Scalar> merged;
    for (int h = 0; h < heads; ++h) {
      auto qh = tape.rows(q, h * dh, dh);
      auto kh = tape.rows(k, h * dh, dh);
      auto vh = tape.rows(v, h * dh, dh);
      auto scores = tape.scale(tape.matmul(tape.transpose(qh), kh), inv_sqrt_dh);
      auto attn = tape.softmax_rows(scores);
      if (diag) diag->attention.push_back(tape.val(attn));
      auto oh = tape.matmul(vh, tape.transpose(attn));
      merged = h == 0 ? oh : tape.vcat(merged, oh);
    }
    auto attn_out = wo.forward(tape, store, merged);
    auto x1 = tape.add(q_in, tape.mul_colvec(attn_out, gate1));

    auto yn = tape.layer_norm_raw(x1);
    yn = tape.mul_colvec(yn, tape.add_scalar(scale2, Scalar(1)));
    yn = tape.add_colvec(yn, shift2);
    auto mlp_out = mlp.forward(tape, store, yn);
    return tape.add(x1, tape.mul_colvec(mlp_out, gate2));
  }
};

// Kernel-integral layer: for every latent query point, the mean over its
// radius neighborhood of a kernel MLP applied to (query position, input
// position, input features). Queries without neighbors output zero.
template <typename Scalar>
struct GnoLayer {
  Eigen::Index c_in = 0, c_out = 0;
  MlpLayer<Scalar> kernel;

  GnoLayer() = default;
  GnoLayer(ParamStore<Scalar>& store, const std::string& name, int p_dim,
           Eigen::Index in, Eigen::Index hidden, Eigen::Index out)
      : c_in(in), c_out(out) {
    kernel = MlpLayer<Scalar>(store, name + ".kernel",
                              {2 * p_dim + in, hidden, hidden, out},
                              Activation::gelu);
  }

  Tensor<Scalar> forward(Tape<Scalar>& tape, ParamStore<Scalar>& store,
                         Tensor<Scalar> values, const PointSet& input_pos,
                         const LatentGrid& query, const EdgeList& edges) const {
    if (values.rows() != c_in)
      throw std::invalid_argument("GnoLayer: input channel mismatch");
    if (values.cols() != input_pos.size())
      throw std::invalid_argument("GnoLayer: values/positions length mismatch");
    const Eigen::Index E = edges.pairs.rows();
    const int p_dim = input_pos.dim();
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    std::vector<std::int32_t> qidx(static_cast<std::size_t>(E));
    std::vector<std::int32_t> iidx(static_cast<std::size_t>(E));
    Mat pos_feat(2 * p_dim, E);
    for (Eigen::Index e = 0; e < E; ++e) {
      const std::int32_t q = edges.pairs(e, 0);
      const std::int32_t i = edges.pairs(e, 1);
      qidx[static_cast<std::size_t>(e)] = q;
      iidx[static_cast<std::size_t>(e)] = i;
      pos_feat.col(e).head(p_dim) =
          query.query_positions.row(q).transpose().template cast<Scalar>();
      pos_feat.col(e).tail(p_dim) =
          input_pos.positions.row(i).transpose().template cast<Scalar>();
    }

    auto gathered = tape.gather_cols(values, iidx);
    auto feat = tape.vcat(tape.constant(std::move(pos_feat)), gathered);
    auto messages = kernel.forward(tape, store, feat);
    return tape.segment_mean_cols(messages, qidx, query.size());
  }
};

// Conditioned token-mixing block for the optional latent processor: one
// residual mixing step across the fixed latent tokens followed by one
// residual channel MLP, both modulated and gated like the attention block.
// Zero-initialized gates make the block the identity.
template <typename Scalar>
struct MixerBlock {
  Eigen::Index l_dim = 0;
  Eigen::Index n_tokens = 0;
  int token_w = -1;
  LinearLayer<Scalar> cond_proj;
  MlpLayer<Scalar> channel_mlp;

  MixerBlock() = default;
  MixerBlock(ParamStore<Scalar>& store, const std::string& name,
             Eigen::Index l, Eigen::Index tokens)
      : l_dim(l), n_tokens(tokens) {
    using Init = typename ParamStore<Scalar>::Init;
    token_w = store.add(name + ".token_w", tokens, tokens, Init::fan_in_uniform);
    cond_proj = LinearLayer<Scalar>(store, name + ".cond", l, 6 * l, true);
    channel_mlp =
        MlpLayer<Scalar>(store, name + ".mlp", {l, 4 * l, l}, Activation::gelu);
  }

  Tensor<Scalar> forward(Tape<Scalar>& tape, ParamStore<Scalar>& store,
                         Tensor<Scalar> x, Tensor<Scalar> cond) const {
    if (x.rows() != l_dim || x.cols() != n_tokens)
      throw std::invalid_argument("MixerBlock: latent shape mismatch");
    auto mod = cond_proj.forward(tape, store, tape.silu(cond));
    auto shift1 = tape.rows(mod, 0, l_dim);
    auto scale1 = tape.rows(mod, l_dim, l_dim);
    auto gate1 = tape.rows(mod, 2 * l_dim, l_dim);
    auto shift2 = tape.rows(mod, 3 * l_dim, l_dim);
    auto scale2 = tape.rows(mod, 4 * l_dim, l_dim);
    auto gate2 = tape.rows(mod, 5 * l_dim, l_dim);

    auto xn = tape.layer_norm_raw(x);
    xn = tape.mul_colvec(xn, tape.add_scalar(scale1, Scalar(1)));
    xn = tape.add_colvec(xn, shift1);
    auto mixed = tape.matmul(xn, tape.param(store, token_w));
    auto x1 = tape.add(x, tape.mul_colvec(mixed, gate1));

    auto yn = tape.layer_norm_raw(x1);
    yn = tape.mul_colvec(yn, tape.add_scalar(scale2, Scalar(1)));
    yn = tape.add_colvec(yn, shift2);
    auto mlp_out = channel_mlp.forward(tape, store, yn);
    return tape.add(x1, tape.mul_colvec(mlp_out, gate2));
  }
};

}  // namespace fieldflow
