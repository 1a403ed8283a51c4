#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "fieldflow/function_batch.hpp"
#include "fieldflow/gaussian_field.hpp"

namespace fieldflow {

// Self-describing binary container for function batches:
//   u32 little-endian header length,
//   key-value text header (first entry the format marker, last a checksum),
//   positions as little-endian 64-bit reals, point-major [N x P_dim],
//   values as little-endian 32-bit reals, sample-major [S x (f_dim * N)].
// Round-trips are bit-exact.
struct ContainerInfo {
  int version = 1;
  Eigen::Index n_points = 0;
  Eigen::Index n_samples = 0;
  int f_dim = 1;
  int p_dim = 0;
  int grid_nx = 0, grid_ny = 0;
  Domain domain;
  std::string provenance;
};

void write_container(const std::string& path, const FunctionBatch& batch,
                     const std::string& provenance = "");

FunctionBatch read_container(const std::string& path);

// Header-only inspection; blobs are not read.
ContainerInfo read_container_info(const std::string& path);

// Draws n_train + n_test fields from the Matern GP with length scale 0.4 and
// smoothness 1.5 on the given mesh, split disjointly.
std::pair<FunctionBatch, FunctionBatch> gen_mesh_gp(const PointSet& points,
                                                    int n_train, int n_test,
                                                    std::uint64_t seed);

}  // namespace fieldflow
