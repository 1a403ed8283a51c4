#include "fieldflow/function_batch.hpp"

#include <stdexcept>

namespace fieldflow {

void validate(const FunctionBatch& batch) {
  validate(batch.points);
  if (batch.f_dim < 1)
    throw std::invalid_argument("FunctionBatch: f_dim must be >= 1");
  if (batch.values.rows() !=
      static_cast<Eigen::Index>(batch.f_dim) * batch.points.size())
    throw std::invalid_argument("FunctionBatch: value rows != f_dim * N");
  if (!batch.values.allFinite())
    throw std::invalid_argument("FunctionBatch: non-finite value");
  if (batch.grid_nx < 0 || batch.grid_ny < 0)
    throw std::invalid_argument("FunctionBatch: negative grid declaration");
  if (batch.grid_nx > 0 &&
      static_cast<Eigen::Index>(batch.grid_nx) * batch.grid_ny !=
          batch.points.size())
    throw std::invalid_argument("FunctionBatch: grid declaration != N");
}

FunctionBatch select_samples(const FunctionBatch& batch,
                             const std::vector<int>& index) {
  FunctionBatch out = batch;
  out.values.resize(batch.values.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] < 0 || index[j] >= batch.n_samples())
      throw std::invalid_argument("select_samples: index out of range");
    out.values.col(static_cast<Eigen::Index>(j)) = batch.values.col(index[j]);
  }
  return out;
}

FunctionBatch select_points(const FunctionBatch& batch,
                            const std::vector<int>& point_index) {
  const int n = batch.n_points();
  const int m = static_cast<int>(point_index.size());
  FunctionBatch out;
  out.f_dim = batch.f_dim;
  out.points.domain = batch.points.domain;
  out.points.positions.resize(m, batch.points.dim());
  out.values.resize(static_cast<Eigen::Index>(batch.f_dim) * m,
                    batch.n_samples());
  for (int j = 0; j < m; ++j) {
    const int i = point_index[static_cast<std::size_t>(j)];
    if (i < 0 || i >= n)
      throw std::invalid_argument("select_points: index out of range");
    out.points.positions.row(j) = batch.points.positions.row(i);
    for (int c = 0; c < batch.f_dim; ++c)
      out.values.row(static_cast<Eigen::Index>(c) * m + j) =
          batch.values.row(static_cast<Eigen::Index>(c) * n + i);
  }
  return out;
}

}  // namespace fieldflow
