#include "fieldflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>

#include "fieldflow/rng.hpp"

namespace fieldflow {

double wasserstein_1d(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int p) {
  if (a.size() != b.size())
    throw std::invalid_argument("wasserstein_1d: length mismatch");
  if (p != 1 && p != 2) throw std::invalid_argument("wasserstein_1d: p must be 1 or 2");
  if (a.size() == 0) throw std::invalid_argument("wasserstein_1d: empty input");
  std::vector<double> as(a.data(), a.data() + a.size());
  std::vector<double> bs(b.data(), b.data() + b.size());
  std::sort(as.begin(), as.end());
  std::sort(bs.begin(), bs.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) {
    const double d = std::abs(as[i] - bs[i]);
    acc += p == 1 ? d : d * d;
  }
  acc /= static_cast<double>(as.size());
  return p == 1 ? acc : std::sqrt(acc);
}

namespace {

// W_p^p between two rows given as mutable buffers (sorted in place).
double wpp_sorted(std::vector<double>& a, std::vector<double>& b, int p) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    acc += p == 1 ? d : d * d;
  }
  return acc / static_cast<double>(a.size());
}

void check_pair(const FunctionBatch& x, const FunctionBatch& y) {
  if (x.values.rows() != y.values.rows())
    throw std::invalid_argument("metrics: discretizations differ");
  if (x.f_dim != y.f_dim)
    throw std::invalid_argument("metrics: channel counts differ");
}

}  // namespace

double sliced_wasserstein(const FunctionBatch& x, const FunctionBatch& y, int L,
                          int p, std::uint64_t seed) {
  check_pair(x, y);
  if (x.n_samples() != y.n_samples())
    throw std::invalid_argument(
        "sliced_wasserstein: sample counts differ; subsample to the smaller set");
  if (L < 1) throw std::invalid_argument("sliced_wasserstein: L must be positive");
  if (p != 1 && p != 2)
    throw std::invalid_argument("sliced_wasserstein: p must be 1 or 2");
  const Eigen::Index d = x.values.rows();
  const Eigen::Index S = x.n_samples();
  if (d == 0 || S == 0)
    throw std::invalid_argument("sliced_wasserstein: empty batch");

  auto engine = make_engine(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd theta(d, L);
  for (int l = 0; l < L; ++l) {
    for (Eigen::Index i = 0; i < d; ++i) theta(i, l) = normal(engine);
    const double norm = theta.col(l).norm();
    if (norm < 1e-300)
      theta(0, l) = 1.0;
    else
      theta.col(l) /= norm;
  }

  // Values are stored single precision, so the projection product runs in
  // single precision; the order statistics accumulate in double.
  const Eigen::MatrixXf theta_f = theta.cast<float>();
  const Eigen::MatrixXf px = theta_f.transpose() * x.values;
  const Eigen::MatrixXf py = theta_f.transpose() * y.values;

  double acc = 0.0;
  std::vector<double> ax(static_cast<std::size_t>(S)), ay(static_cast<std::size_t>(S));
  for (int l = 0; l < L; ++l) {
    for (Eigen::Index s = 0; s < S; ++s) {
      ax[static_cast<std::size_t>(s)] = static_cast<double>(px(l, s));
      ay[static_cast<std::size_t>(s)] = static_cast<double>(py(l, s));
    }
    acc += wpp_sorted(ax, ay, p);
  }
  acc /= static_cast<double>(L);
  return p == 1 ? acc : std::sqrt(acc);
}

AveragedSwd averaged_swd(const FunctionBatch& x, const FunctionBatch& y, int L,
                         int n_run, int p, std::uint64_t seed) {
  if (n_run < 1) throw std::invalid_argument("averaged_swd: n_run must be positive");
  AveragedSwd out;
  out.runs.reserve(static_cast<std::size_t>(n_run));
  for (int r = 0; r < n_run; ++r)
    out.runs.push_back(
        sliced_wasserstein(x, y, L, p, derive_seed(seed, static_cast<std::uint64_t>(r))));
  double acc = 0.0;
  for (double v : out.runs) acc += v;
  out.mean = acc / static_cast<double>(n_run);
  return out;
}

namespace {

// Pairwise squared distances via the inner-product identity, in double,
// blockwise over columns.
Eigen::MatrixXd gram_block(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           const Eigen::VectorXd& a_sq, const Eigen::VectorXd& b_sq) {
  Eigen::MatrixXd d2 = -2.0 * (a.transpose() * b);
  d2.colwise() += a_sq;
  d2.rowwise() += b_sq.transpose();
  return d2;
}

double kernel_sum(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb,
                  double inv_two_bw2, bool skip_diagonal) {
  const Eigen::Index na = xa.cols(), nb = xb.cols();
  const Eigen::VectorXd a_sq = xa.colwise().squaredNorm();
  const Eigen::VectorXd b_sq = xb.colwise().squaredNorm();
  const Eigen::Index block = 512;
  double acc = 0.0;
  for (Eigen::Index j0 = 0; j0 < nb; j0 += block) {
    const Eigen::Index w = std::min(block, nb - j0);
    Eigen::MatrixXd d2 = gram_block(xa, xb.middleCols(j0, w), a_sq,
                                    b_sq.segment(j0, w));
    for (Eigen::Index j = 0; j < w; ++j)
      for (Eigen::Index i = 0; i < na; ++i) {
        if (skip_diagonal && i == j0 + j) continue;
        acc += std::exp(-std::max(d2(i, j), 0.0) * inv_two_bw2);
      }
  }
  return acc;
}

}  // namespace

double mmd_unbiased(const FunctionBatch& x, const FunctionBatch& y,
                    double bandwidth, double* raw_squared) {
  check_pair(x, y);
  const Eigen::Index n = x.n_samples(), m = y.n_samples();
  if (n < 2 || m < 2)
    throw std::invalid_argument("mmd_unbiased: need at least 2 samples per set");
  if (!(bandwidth > 0))
    throw std::invalid_argument("mmd_unbiased: bandwidth must be positive");
  const Eigen::MatrixXd xs = x.values.cast<double>();
  const Eigen::MatrixXd ys = y.values.cast<double>();
  const double inv_two_bw2 = 1.0 / (2.0 * bandwidth * bandwidth);

  const double sxx = kernel_sum(xs, xs, inv_two_bw2, true);
  const double syy = kernel_sum(ys, ys, inv_two_bw2, true);
  const double sxy = kernel_sum(xs, ys, inv_two_bw2, false);
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  const double sq = sxx / (nn * (nn - 1.0)) + syy / (mm * (mm - 1.0)) -
                    2.0 * sxy / (nn * mm);
  if (raw_squared) *raw_squared = sq;
  return std::sqrt(std::max(sq, 0.0));
}

double median_bandwidth(const FunctionBatch& x, const FunctionBatch& y,
                        bool* degenerate) {
  check_pair(x, y);
  const Eigen::Index total = x.n_samples() + y.n_samples();
  if (total < 2)
    throw std::invalid_argument("median_bandwidth: need at least 2 pooled samples");
  const Eigen::Index cap = 2000;
  const Eigen::Index stride = (total + cap - 1) / cap;

  std::vector<Eigen::VectorXd> pool;
  for (Eigen::Index i = 0; i < total; i += stride) {
    if (i < x.n_samples())
      pool.push_back(x.values.col(i).cast<double>());
    else
      pool.push_back(y.values.col(i - x.n_samples()).cast<double>());
  }
  if (pool.size() < 2) pool.push_back(y.values.col(y.n_samples() - 1).cast<double>());

  std::vector<double> dists;
  dists.reserve(pool.size() * (pool.size() - 1) / 2);
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j)
      dists.push_back((pool[i] - pool[j]).norm());
  std::sort(dists.begin(), dists.end());
  const std::size_t k = dists.size();
  const double median =
      k % 2 == 1 ? dists[k / 2] : 0.5 * (dists[k / 2 - 1] + dists[k / 2]);
  if (median <= 0.0) {
    if (degenerate) *degenerate = true;
    return 1.0;
  }
  if (degenerate) *degenerate = false;
  return median / std::sqrt(2.0);
}

namespace {

Eigen::MatrixXcd dft_matrix(int n, bool inverse) {
  Eigen::MatrixXcd d(n, n);
  const double sign = inverse ? 2.0 * M_PI : -2.0 * M_PI;
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      const double angle = sign * static_cast<double>(j) * static_cast<double>(k) /
                           static_cast<double>(n);
      d(j, k) = std::complex<double>(std::cos(angle), std::sin(angle));
    }
  return d;
}

// Mean power spectrum P(k) = mean_s |F_s(k)|^2 / N on the [nx, ny] grid.
Eigen::MatrixXd mean_power(const FunctionBatch& batch, int nx, int ny,
                           const Eigen::MatrixXcd& dx, const Eigen::MatrixXcd& dy) {
  const Eigen::Index S = batch.n_samples();
  const double n_total = static_cast<double>(nx) * static_cast<double>(ny);
  Eigen::MatrixXd power = Eigen::MatrixXd::Zero(nx, ny);
  Eigen::MatrixXcd field(nx, ny);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < ny; ++j)
        field(i, j) = static_cast<double>(
            batch.values(static_cast<Eigen::Index>(i) * ny + j, s));
    const Eigen::MatrixXcd f = dx * field * dy.transpose();
    power += f.cwiseAbs2() / n_total;
  }
  return power / static_cast<double>(S);
}

std::vector<double> bin_radially(const Eigen::MatrixXd& power, int nx, int ny,
                                 std::vector<int>* counts_out = nullptr) {
  const int rmax = static_cast<int>(std::llround(
      std::hypot(static_cast<double>(nx / 2), static_cast<double>(ny / 2))));
  std::vector<double> bins(static_cast<std::size_t>(rmax) + 1, 0.0);
  std::vector<int> counts(static_cast<std::size_t>(rmax) + 1, 0);
  for (int i = 0; i < nx; ++i) {
    const int ki = i <= nx / 2 ? i : i - nx;
    for (int j = 0; j < ny; ++j) {
      const int kj = j <= ny / 2 ? j : j - ny;
      const int r = static_cast<int>(std::llround(
          std::hypot(static_cast<double>(ki), static_cast<double>(kj))));
      if (r > rmax) continue;
      bins[static_cast<std::size_t>(r)] += power(i, j);
      counts[static_cast<std::size_t>(r)] += 1;
    }
  }
  for (std::size_t r = 0; r < bins.size(); ++r)
    if (counts[r] > 0) bins[r] /= static_cast<double>(counts[r]);
  if (counts_out) *counts_out = std::move(counts);
  return bins;
}

std::vector<double> histogram_unit_mass(const FunctionBatch& batch, double lo,
                                        double hi, int n_bins) {
  std::vector<double> hist(static_cast<std::size_t>(n_bins), 0.0);
  const double width = hi - lo;
  const Eigen::Index total = batch.values.size();
  if (total == 0 || !(width > 0)) {
    // Degenerate range: all mass in the first bin.
    if (total > 0) hist[0] = 1.0;
    return hist;
  }
  const float* data = batch.values.data();
  for (Eigen::Index i = 0; i < total; ++i) {
    const double v = static_cast<double>(data[i]);
    int b = static_cast<int>((v - lo) / width * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& h : hist) h /= static_cast<double>(total);
  return hist;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace

std::vector<double> radial_spectrum(const FunctionBatch& batch, int nx, int ny) {
  if (batch.f_dim != 1)
    throw std::invalid_argument("radial_spectrum: single-channel fields only");
  if (static_cast<Eigen::Index>(nx) * ny != batch.n_points())
    throw std::invalid_argument("radial_spectrum: grid shape does not match batch");
  const Eigen::MatrixXcd dx = dft_matrix(nx, false);
  const Eigen::MatrixXcd dy = dft_matrix(ny, false);
  return bin_radially(mean_power(batch, nx, ny, dx, dy), nx, ny);
}

GridMetrics grid_metrics(const FunctionBatch& x, const FunctionBatch& y, int nx,
                         int ny) {
  check_pair(x, y);
  if (x.f_dim != 1)
    throw std::invalid_argument("grid_metrics: single-channel fields only");
  if (nx < 1 || ny < 1 || static_cast<Eigen::Index>(nx) * ny != x.n_points())
    throw std::invalid_argument("grid_metrics: grid shape does not match batch");
  if (x.n_samples() == 0 || y.n_samples() == 0)
    throw std::invalid_argument("grid_metrics: empty batch");

  const Eigen::MatrixXcd dx = dft_matrix(nx, false);
  const Eigen::MatrixXcd dy = dft_matrix(ny, false);
  const Eigen::MatrixXd px = mean_power(x, nx, ny, dx, dy);
  const Eigen::MatrixXd py = mean_power(y, nx, ny, dx, dy);

  GridMetrics out;
  out.spectra_mse = mse(bin_radially(px, nx, ny), bin_radially(py, nx, ny));

  const Eigen::MatrixXcd ix = dft_matrix(nx, true);
  const Eigen::MatrixXcd iy = dft_matrix(ny, true);
  const double n_total = static_cast<double>(nx) * static_cast<double>(ny);
  const Eigen::MatrixXd ax =
      (ix * px.cast<std::complex<double>>() * iy.transpose()).real() / n_total;
  const Eigen::MatrixXd ay =
      (ix * py.cast<std::complex<double>>() * iy.transpose()).real() / n_total;
  out.autocov_mse = (ax - ay).squaredNorm() / n_total;

  const float x_lo = x.values.size() ? x.values.minCoeff() : 0.0f;
  const float x_hi = x.values.size() ? x.values.maxCoeff() : 0.0f;
  const float y_lo = y.values.size() ? y.values.minCoeff() : 0.0f;
  const float y_hi = y.values.size() ? y.values.maxCoeff() : 0.0f;
  const double lo = std::min(static_cast<double>(x_lo), static_cast<double>(y_lo));
  const double hi = std::max(static_cast<double>(x_hi), static_cast<double>(y_hi));
  out.density_mse = mse(histogram_unit_mass(x, lo, hi, 100),
                        histogram_unit_mass(y, lo, hi, 100));
  return out;
}

MetricReport compute_metrics(const FunctionBatch& x, const FunctionBatch& y,
                             const MetricParams& params) {
  check_pair(x, y);
  MetricReport report;
  report.n_projections = params.n_projections;
  report.n_run = params.n_run;
  report.p = params.p;
  report.seed = params.seed;
  report.n_x_samples = x.n_samples();
  report.n_y_samples = y.n_samples();

  const AveragedSwd swd = averaged_swd(x, y, params.n_projections, params.n_run,
                                       params.p, params.seed);
  report.swd_mean = swd.mean;
  report.swd_runs = swd.runs;

  if (params.bandwidth_override > 0) {
    report.mmd_bandwidth = params.bandwidth_override;
    report.bandwidth_degenerate = false;
  } else {
    report.mmd_bandwidth = median_bandwidth(x, y, &report.bandwidth_degenerate);
  }
  report.mmd = mmd_unbiased(x, y, report.mmd_bandwidth, &report.mmd_squared);
  report.mmd_negative = report.mmd_squared < 0;

  if (x.grid_nx > 0 && x.grid_ny > 0 && x.grid_nx == y.grid_nx &&
      x.grid_ny == y.grid_ny && x.f_dim == 1) {
    report.grid = grid_metrics(x, y, x.grid_nx, x.grid_ny);
    report.has_grid_metrics = true;
  }
  return report;
}

std::string serialize_report(const MetricReport& r) {
  KvDoc doc;
  doc.set("format", "fieldflow-metrics");
  doc.set_int("version", 1);
  doc.set_real("swd.mean", r.swd_mean);
  doc.set_reals("swd.runs", r.swd_runs);
  doc.set_real("mmd.value", r.mmd);
  doc.set_real("mmd.squared", r.mmd_squared);
  doc.set_bool("mmd.negative", r.mmd_negative);
  doc.set_real("mmd.bandwidth", r.mmd_bandwidth);
  doc.set_bool("mmd.bandwidth_degenerate", r.bandwidth_degenerate);
  doc.set_bool("grid.present", r.has_grid_metrics);
  if (r.has_grid_metrics) {
    doc.set("grid.note", "definitions are local reconstructions (non-canonical)");
    doc.set_real("grid.spectra_mse", r.grid.spectra_mse);
    doc.set_real("grid.autocov_mse", r.grid.autocov_mse);
    doc.set_real("grid.density_mse", r.grid.density_mse);
  }
  doc.set_int("meta.n_projections", r.n_projections);
  doc.set_int("meta.n_run", r.n_run);
  doc.set_int("meta.p", r.p);
  doc.set_int("meta.seed", static_cast<long long>(r.seed));
  doc.set_int("meta.n_x_samples", r.n_x_samples);
  doc.set_int("meta.n_y_samples", r.n_y_samples);
  return doc.serialize();
}

MetricReport parse_report(const std::string& text) {
  KvDoc doc = KvDoc::parse(text);
  if (!doc.has("format") || doc.get("format") != "fieldflow-metrics")
    throw std::runtime_error("metric report: wrong format marker");
  if (doc.get_int("version") != 1)
    throw std::runtime_error("metric report: unsupported version");
  MetricReport r;
  r.swd_mean = doc.get_real("swd.mean");
  r.swd_runs = doc.get_reals("swd.runs");
  r.mmd = doc.get_real("mmd.value");
  r.mmd_squared = doc.get_real("mmd.squared");
  r.mmd_negative = doc.get_bool("mmd.negative");
  r.mmd_bandwidth = doc.get_real("mmd.bandwidth");
  r.bandwidth_degenerate = doc.get_bool("mmd.bandwidth_degenerate");
  r.has_grid_metrics = doc.get_bool("grid.present");
  if (r.has_grid_metrics) {
    r.grid.spectra_mse = doc.get_real("grid.spectra_mse");
    r.grid.autocov_mse = doc.get_real("grid.autocov_mse");
    r.grid.density_mse = doc.get_real("grid.density_mse");
  }
  r.n_projections = static_cast<int>(doc.get_int("meta.n_projections"));
  r.n_run = static_cast<int>(doc.get_int("meta.n_run"));
  r.p = static_cast<int>(doc.get_int("meta.p"));
  r.seed = static_cast<std::uint64_t>(doc.get_int("meta.seed"));
  r.n_x_samples = doc.get_int("meta.n_x_samples");
  r.n_y_samples = doc.get_int("meta.n_y_samples");
  return r;
}

}  // namespace fieldflow
