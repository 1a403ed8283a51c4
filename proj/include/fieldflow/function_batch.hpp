#pragma once

#include <Eigen/Dense>

#include "fieldflow/geometry.hpp"

namespace fieldflow {

// A set of S function samples sharing one PointSet. Values are stored in
// single precision as a [f_dim * N, S] matrix with one column per sample;
// row c * N + n holds channel c at point n. Positions stay in double.
struct FunctionBatch {
  PointSet points;
  int f_dim = 1;
  Eigen::MatrixXf values;
  // Set when the points form a declared regular grid (enables the
  // spectra/autocovariance/density metrics). 0 means "not a grid".
  int grid_nx = 0;
  int grid_ny = 0;

  int n_points() const { return points.size(); }
  int n_samples() const { return static_cast<int>(values.cols()); }
};

// Throws std::invalid_argument when the value matrix does not match
// f_dim * N rows or contains non-finite entries.
void validate(const FunctionBatch& batch);

// Columns of `batch.values` selected by `index`, keeping the point set.
FunctionBatch select_samples(const FunctionBatch& batch,
                             const std::vector<int>& index);

// Restriction of every sample to a subset of observation points.
FunctionBatch select_points(const FunctionBatch& batch,
                            const std::vector<int>& point_index);

}  // namespace fieldflow
