#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fieldflow/function_batch.hpp"
#include "fieldflow/gaussian_field.hpp"
#include "fieldflow/kvtext.hpp"
#include "fieldflow/rng.hpp"
#include "fieldflow/velocity_model.hpp"

namespace fieldflow {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 96;
  double learning_rate = 1e-4;
  double lr_decay_gamma = 0.8;
  int lr_decay_every = 25;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  bool use_ot_coupling = true;
  std::uint64_t seed = 0;
  GPSpec base_gp;
};

void validate(const TrainConfig& cfg);

enum class SolverMethod { rk4_fixed, dormand_prince };

struct SolverConfig {
  SolverMethod method = SolverMethod::dormand_prince;
  int steps = 100;            // rk4_fixed
  double rtol = 1e-5;         // dormand_prince
  double atol = 1e-5;
  double initial_step = 1e-2;
};

void validate(const SolverConfig& cfg);

std::string to_string(SolverMethod m);
SolverMethod solver_method_from_string(const std::string& s);

// Base sample i is paired with data sample permutation[i].
struct CouplingPlan {
  std::vector<int> permutation;
  double total_cost = 0.0;
};

// Exact minimum-cost assignment (shortest augmenting path, O(n^3)) on a
// square cost matrix; returns row -> column.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

CouplingPlan ot_couple(const FunctionBatch& base, const FunctionBatch& data);

// f_t = (1 - t) f0 + t f1 and the regression target v = f1 - f0.
template <typename Derived>
std::pair<typename Derived::PlainObject, typename Derived::PlainObject>
path_sample(const Eigen::MatrixBase<Derived>& f0,
            const Eigen::MatrixBase<Derived>& f1, double t) {
  if (f0.rows() != f1.rows() || f0.cols() != f1.cols())
    throw std::invalid_argument("path_sample: shape mismatch");
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("path_sample: t must lie in [0, 1]");
  using Scalar = typename Derived::Scalar;
  const Scalar ts = static_cast<Scalar>(t);
  typename Derived::PlainObject ft =
      (Scalar(1) - ts) * f0.derived() + ts * f1.derived();
  typename Derived::PlainObject v = f1.derived() - f0.derived();
  return {std::move(ft), std::move(v)};
}

// Column s of a FunctionBatch value matrix reshaped to [f_dim, N].
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> field_sample(
    const FunctionBatch& batch, Eigen::Index s) {
  const Eigen::Index n = batch.n_points();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(batch.f_dim, n);
  for (int c = 0; c < batch.f_dim; ++c)
    for (Eigen::Index i = 0; i < n; ++i)
      out(c, i) = static_cast<Scalar>(batch.values(c * n + i, s));
  return out;
}

// Optimizer and progress state carried across a resumed run. Moments are
// persisted in single precision.
template <typename Scalar>
struct TrainState {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m, v;
  std::int64_t step = 0;
  int epoch = 0;

  void ensure(Eigen::Index n) {
    if (m.size() != n) {
      m = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
      v = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
    }
  }
};

inline const char* kOptStateMagic = "fieldflow-optstate";

KvDoc read_opt_state_header(std::istream& in, const std::string& path);

template <typename Scalar>
void save_opt_state(const std::string& path, const TrainState<Scalar>& st) {
  KvDoc doc;
  doc.set("format", kOptStateMagic);
  doc.set_int("version", 1);
  doc.set_int("param_count", st.m.size());
  doc.set_int("step", st.step);
  doc.set_int("epoch", st.epoch);
  const std::string header = doc.serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_opt_state: cannot open " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(header.size());
  char lenb[4] = {static_cast<char>(len & 0xff),
                  static_cast<char>((len >> 8) & 0xff),
                  static_cast<char>((len >> 16) & 0xff),
                  static_cast<char>((len >> 24) & 0xff)};
  out.write(lenb, 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<float> buf(static_cast<std::size_t>(st.m.size()));
  for (Eigen::Index i = 0; i < st.m.size(); ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<float>(st.m[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  for (Eigen::Index i = 0; i < st.v.size(); ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<float>(st.v[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw std::runtime_error("save_opt_state: write failed for " + path);
}

template <typename Scalar>
TrainState<Scalar> load_opt_state(const std::string& path,
                                  Eigen::Index expected_params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_opt_state: cannot open " + path);
  KvDoc doc = read_opt_state_header(in, path);
  const Eigen::Index count = doc.get_int("param_count");
  if (count != expected_params)
    throw std::runtime_error("load_opt_state: parameter count mismatch in " +
                             path);
  TrainState<Scalar> st;
  st.step = doc.get_int("step");
  st.epoch = static_cast<int>(doc.get_int("epoch"));
  st.ensure(count);
  std::vector<float> buf(static_cast<std::size_t>(count));
  for (auto* vec : {&st.m, &st.v}) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
      throw std::runtime_error("load_opt_state: truncated blob in " + path);
    for (Eigen::Index i = 0; i < count; ++i)
      (*vec)[i] = static_cast<Scalar>(buf[static_cast<std::size_t>(i)]);
  }
  return st;
}

template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, TrainState<Scalar>& st,
                const TrainConfig& cfg, double lr) {
  st.ensure(params.size());
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(params.grads[i]);
    const double m = cfg.beta1 * static_cast<double>(st.m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * static_cast<double>(st.v[i]) + (1.0 - cfg.beta2) * g * g;
    st.m[i] = static_cast<Scalar>(m);
    st.v[i] = static_cast<Scalar>(v);
    const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps) +
                          cfg.weight_decay * static_cast<double>(params.values[i]);
    params.values[i] -= static_cast<Scalar>(lr * update);
  }
}

template <typename Scalar>
double params_grad_sqnorm(const ParamStore<Scalar>& params) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(params.grads[i]);
    acc += g * g;
  }
  return acc;
}

// One optimization pass over the dataset per epoch: shuffle, slice
// minibatches, draw fresh base samples, optionally assignment-couple the
// pairs, regress the velocity at an independent Uniform[0,1] time per pair.
// Returns the per-epoch mean loss for the epochs executed (resume-aware when
// state->epoch > 0).
template <typename Scalar>
std::vector<double> train(VelocityModel<Scalar>& model,
                          const FunctionBatch& dataset, const TrainConfig& cfg,
                          TrainState<Scalar>* state = nullptr,
                          std::ostream* log = nullptr) {
  validate(cfg);
  validate(dataset);
  if (dataset.f_dim != model.config.f_dim)
    throw std::invalid_argument("train: dataset and model f_dim differ");
  const Eigen::Index S = dataset.n_samples();
  if (S < 1) throw std::invalid_argument("train: dataset is empty");
  const Eigen::Index N = dataset.n_points();
  const PointSet& pos = dataset.points;

  const auto& ctx = model.mesh_context(pos);
  if (ctx.edges.no_edges && log)
    (*log) << "warning: radius graph has no edges; encoder input is empty\n";
  const CholFactor factor =
      cholesky_with_jitter(covariance_matrix(pos, cfg.base_gp), cfg.base_gp.jitter);

  TrainState<Scalar> local;
  TrainState<Scalar>& st = state ? *state : local;
  st.ensure(model.params.size());

  const Eigen::Index B = std::min<Eigen::Index>(cfg.batch_size, S);
  if (cfg.use_ot_coupling && B < 2)
    throw std::invalid_argument("train: coupling needs batch size of at least 2");
  const Eigen::Index steps_per_epoch = std::max<Eigen::Index>(1, S / B);

  using Mat = typename VelocityModel<Scalar>::Mat;
  std::vector<double> history;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(S));
  Tape<Scalar> tape;

  for (int epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    auto engine = make_engine(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), engine);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::uint64_t base_root =
        derive_seed(cfg.seed, 2000000 + static_cast<std::uint64_t>(epoch));
    const double lr = cfg.learning_rate *
                      std::pow(cfg.lr_decay_gamma, epoch / cfg.lr_decay_every);

    double epoch_loss = 0.0;
    for (Eigen::Index s = 0; s < steps_per_epoch; ++s) {
      FunctionBatch base = sample_gp_with_factor(
          factor, pos, static_cast<int>(B * dataset.f_dim),
          derive_seed(base_root, static_cast<std::uint64_t>(s)));

      std::vector<Mat> f0(static_cast<std::size_t>(B)), f1(static_cast<std::size_t>(B));
      for (Eigen::Index b = 0; b < B; ++b) {
        Mat f0b(dataset.f_dim, N);
        for (int c = 0; c < dataset.f_dim; ++c)
          f0b.row(c) = base.values.col(b * dataset.f_dim + c)
                           .transpose()
                           .template cast<Scalar>();
        f0[static_cast<std::size_t>(b)] = std::move(f0b);
        f1[static_cast<std::size_t>(b)] =
            field_sample<Scalar>(dataset, order[static_cast<std::size_t>(s * B + b)]);
      }

      if (cfg.use_ot_coupling) {
        Eigen::MatrixXd cost(B, B);
        for (Eigen::Index i = 0; i < B; ++i)
          for (Eigen::Index j = 0; j < B; ++j)
            cost(i, j) = (f0[static_cast<std::size_t>(i)].template cast<double>() -
                          f1[static_cast<std::size_t>(j)].template cast<double>())
                             .squaredNorm();
        const std::vector<int> perm = solve_assignment(cost);
        std::vector<Mat> paired(static_cast<std::size_t>(B));
        for (Eigen::Index i = 0; i < B; ++i)
          paired[static_cast<std::size_t>(i)] =
              std::move(f1[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
        f1 = std::move(paired);
      }

      tape.clear();
      Tensor<Scalar> loss;
      for (Eigen::Index b = 0; b < B; ++b) {
        const double t = unif(engine);
        auto [ft, vt] = path_sample(f0[static_cast<std::size_t>(b)],
                                    f1[static_cast<std::size_t>(b)], t);
        auto pred = model.forward(tape, ft, pos, t);
        auto diff = tape.sub(pred, tape.constant(std::move(vt)));
        auto sq = tape.mean_all(tape.cwise_mul(diff, diff));
        loss = b == 0 ? sq : tape.add(loss, sq);
      }
      loss = tape.scale(loss, Scalar(1) / static_cast<Scalar>(B));
      const double loss_val = static_cast<double>(tape.val(loss)(0, 0));
      if (!std::isfinite(loss_val))
        throw std::runtime_error("train: non-finite loss at global step " +
                                 std::to_string(st.step));
      model.params.zero_grads();
      tape.backward(loss);

      if (cfg.grad_clip > 0) {
        const double norm =
            std::sqrt(params_grad_sqnorm(model.params));
        if (norm > cfg.grad_clip)
          model.params.grads *= static_cast<Scalar>(cfg.grad_clip / norm);
      }
      adamw_step(model.params, st, cfg, lr);
      epoch_loss += loss_val;
    }
    history.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    st.epoch = epoch + 1;
    if (log)
      (*log) << "epoch " << epoch << " loss " << history.back() << "\n";
  }
  return history;
}

void write_loss_table(const std::string& path, const std::vector<double>& losses,
                      int first_epoch = 0, bool append = false);

// Integrates y' = F(t, y) from t=0 to t=1 for a matrix-valued state.
template <typename Scalar, typename F>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> integrate_ode(
    F&& field, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& y0,
    const SolverConfig& cfg) {
  validate(cfg);
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  if (cfg.method == SolverMethod::rk4_fixed) {
    const double h = 1.0 / cfg.steps;
    Mat y = y0;
    for (int s = 0; s < cfg.steps; ++s) {
      const double t = static_cast<double>(s) * h;
      const Scalar hs = static_cast<Scalar>(h);
      Mat k1 = field(t, y);
      Mat k2 = field(t + 0.5 * h, Mat(y + Scalar(0.5) * hs * k1));
      Mat k3 = field(t + 0.5 * h, Mat(y + Scalar(0.5) * hs * k2));
      Mat k4 = field(t + h, Mat(y + hs * k3));
      y += hs / Scalar(6) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
    }
    return y;
  }

  // Dormand-Prince 5(4) with the first-same-as-last stage reused.
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                      a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                      a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                      a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  Mat y = y0;
  double t = 0.0;
  double h = std::min(cfg.initial_step, 1.0);
  Mat k1 = field(t, y);
  const Eigen::Index n = y.size();
  int iterations = 0;
  while (t < 1.0 - 1e-14) {
    if (++iterations > 1000000)
      throw std::runtime_error("integrate: adaptive solver exceeded step limit");
    h = std::min(h, 1.0 - t);
    if (h < 1e-12)
      throw std::runtime_error("integrate: adaptive step size underflow");
    const Scalar hs = static_cast<Scalar>(h);
    Mat k2 = field(t + h / 5, Mat(y + hs * Scalar(a21) * k1));
    Mat k3 = field(t + 3 * h / 10, Mat(y + hs * (Scalar(a31) * k1 + Scalar(a32) * k2)));
    Mat k4 = field(t + 4 * h / 5,
                   Mat(y + hs * (Scalar(a41) * k1 + Scalar(a42) * k2 + Scalar(a43) * k3)));
    Mat k5 = field(t + 8 * h / 9,
                   Mat(y + hs * (Scalar(a51) * k1 + Scalar(a52) * k2 +
                                 Scalar(a53) * k3 + Scalar(a54) * k4)));
    Mat k6 = field(t + h, Mat(y + hs * (Scalar(a61) * k1 + Scalar(a62) * k2 +
                                        Scalar(a63) * k3 + Scalar(a64) * k4 +
                                        Scalar(a65) * k5)));
    Mat y5 = y + hs * (Scalar(b1) * k1 + Scalar(b3) * k3 + Scalar(b4) * k4 +
                       Scalar(b5) * k5 + Scalar(b6) * k6);
    Mat k7 = field(t + h, y5);

    double err_acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double err_i =
          h * (e1 * static_cast<double>(k1(i)) + e3 * static_cast<double>(k3(i)) +
               e4 * static_cast<double>(k4(i)) + e5 * static_cast<double>(k5(i)) +
               e6 * static_cast<double>(k6(i)) + e7 * static_cast<double>(k7(i)));
      const double sc =
          cfg.atol + cfg.rtol * std::max(std::abs(static_cast<double>(y(i))),
                                         std::abs(static_cast<double>(y5(i))));
      err_acc += (err_i / sc) * (err_i / sc);
    }
    const double err = std::sqrt(err_acc / static_cast<double>(n));

    if (err <= 1.0) {
      t += h;
      y = std::move(y5);
      k1 = std::move(k7);
      const double factor =
          err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
      h *= factor;
    } else {
      h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
    }
  }
  return y;
}

template <typename Scalar>
typename VelocityModel<Scalar>::Mat integrate(
    VelocityModel<Scalar>& model, const typename VelocityModel<Scalar>::Mat& f0,
    const PointSet& pos, const SolverConfig& cfg) {
  auto field = [&](double t, const typename VelocityModel<Scalar>::Mat& y) {
    return model.velocity(y, pos, t);
  };
  return integrate_ode<Scalar>(field, f0, cfg);
}

// Draws n base samples on pos and transports each to t=1. Positions may
// differ from the training discretization.
template <typename Scalar>
FunctionBatch generate(VelocityModel<Scalar>& model, const GPSpec& base_gp,
                       const PointSet& pos, int n, const SolverConfig& solver,
                       std::uint64_t seed) {
  validate(solver);
  if (n < 0) throw std::invalid_argument("generate: n must be non-negative");
  const int f_dim = model.config.f_dim;
  const Eigen::Index N = pos.size();

  FunctionBatch out;
  out.points = pos;
  out.f_dim = f_dim;
  out.values.resize(f_dim * N, n);
  if (n == 0) return out;

  FunctionBatch base = sample_gp(base_gp, pos, n * f_dim, seed);
  using Mat = typename VelocityModel<Scalar>::Mat;
  for (int i = 0; i < n; ++i) {
    Mat f0(f_dim, N);
    for (int c = 0; c < f_dim; ++c)
      f0.row(c) = base.values.col(i * f_dim + c).transpose().template cast<Scalar>();
    Mat f1 = integrate(model, f0, pos, solver);
    for (int c = 0; c < f_dim; ++c)
      for (Eigen::Index p = 0; p < N; ++p)
        out.values(c * N + p, i) = static_cast<float>(f1(c, p));
  }
  return out;
}

}  // namespace fieldflow
