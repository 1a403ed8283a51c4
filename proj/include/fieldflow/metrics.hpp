#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fieldflow/function_batch.hpp"
#include "fieldflow/kvtext.hpp"

namespace fieldflow {

// Exact p-Wasserstein distance between equal-size empirical measures:
// ((1/N) sum |a_(i) - b_(i)|^p)^(1/p) over sorted order statistics.
double wasserstein_1d(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int p);

// Monte Carlo sliced Wasserstein distance with L directions drawn uniformly
// on the unit sphere in R^(f_dim * N): ((1/L) sum_l W_p^p(proj_l))^(1/p).
// Requires equal sample counts (the order-statistics estimator is exact only
// then); callers subsample the larger set beforehand.
double sliced_wasserstein(const FunctionBatch& x, const FunctionBatch& y, int L,
                          int p, std::uint64_t seed);

struct AveragedSwd {
  double mean = 0.0;
  std::vector<double> runs;
};

// n_run independent sliced estimates with per-run derived seeds.
AveragedSwd averaged_swd(const FunctionBatch& x, const FunctionBatch& y,
                         int L = 256, int n_run = 10, int p = 2,
                         std::uint64_t seed = 0);

// Unbiased U-statistic MMD with the Gaussian RBF kernel
// k(a,b) = exp(-|a-b|^2 / (2 bw^2)). Returns sqrt(max(estimate, 0)); the raw
// squared estimate (which may be slightly negative) lands in *raw_squared.
double mmd_unbiased(const FunctionBatch& x, const FunctionBatch& y,
                    double bandwidth, double* raw_squared = nullptr);

// Median pairwise distance over the pooled samples divided by sqrt(2); the
// pool is subsampled with a fixed stride to at most 2000 points. An all-equal
// pool has median 0 and falls back to 1.0 with *degenerate set.
double median_bandwidth(const FunctionBatch& x, const FunctionBatch& y,
                        bool* degenerate = nullptr);

struct GridMetrics {
  double spectra_mse = 0.0;
  double autocov_mse = 0.0;
  double density_mse = 0.0;
};

// Regular-grid comparisons between two single-channel batches: MSE of the
// radially binned mean power spectra, of the mean autocovariance maps
// (inverse transform of the mean power spectrum), and of 100-bin unit-mass
// value histograms over the pooled range. These definitions are local
// reconstructions; reports mark them non-canonical.
GridMetrics grid_metrics(const FunctionBatch& x, const FunctionBatch& y, int nx,
                         int ny);

// Radially binned mean power spectrum (helper exposed for plot output).
std::vector<double> radial_spectrum(const FunctionBatch& batch, int nx, int ny);

struct MetricParams {
  int n_projections = 256;
  int n_run = 10;
  int p = 2;
  std::uint64_t seed = 0;
  double bandwidth_override = 0.0;  // <= 0 selects the median heuristic
};

struct MetricReport {
  double swd_mean = 0.0;
  std::vector<double> swd_runs;
  double mmd = 0.0;
  double mmd_squared = 0.0;
  bool mmd_negative = false;
  double mmd_bandwidth = 0.0;
  bool bandwidth_degenerate = false;
  bool has_grid_metrics = false;
  GridMetrics grid;
  int n_projections = 0;
  int n_run = 0;
  int p = 2;
  std::uint64_t seed = 0;
  std::int64_t n_x_samples = 0;
  std::int64_t n_y_samples = 0;
};

// Full comparison: averaged SWD, MMD with the configured bandwidth, and grid
// metrics when both batches declare the same regular grid.
MetricReport compute_metrics(const FunctionBatch& x, const FunctionBatch& y,
                             const MetricParams& params);

std::string serialize_report(const MetricReport& report);
MetricReport parse_report(const std::string& text);

}  // namespace fieldflow
