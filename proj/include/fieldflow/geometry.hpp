#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace fieldflow {

// Domain the observation positions live in: an axis-aligned box in R^{1..3}
// or a sphere embedded in R^3.
enum class DomainKind { box, sphere };

struct Domain {
  DomainKind kind = DomainKind::box;
  Eigen::VectorXd lower;  // box only
  Eigen::VectorXd upper;  // box only
  double radius = 1.0;    // sphere only

  static Domain box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);
  static Domain unit_box(int dim);
  static Domain sphere(double radius);
  int dim() const;
};

// Observation positions of one function discretization. Positions are kept in
// double precision throughout: neighbor search and kernel distances are
// position-sensitive.
struct PointSet {
  Eigen::MatrixXd positions;  // [N, P_dim]
  Domain domain;

  int size() const { return static_cast<int>(positions.rows()); }
  int dim() const { return static_cast<int>(positions.cols()); }
};

// Validates the PointSet invariants (finiteness, dimension, containment).
// Throws std::invalid_argument on violation.
void validate(const PointSet& points);

PointSet make_point_set(Eigen::MatrixXd positions, Domain domain);

enum class GridKind { regular, spherical_lat_lon };

// Fixed latent query positions the encoder maps onto. N_node stays constant
// no matter how the input function is discretized.
struct LatentGrid {
  Eigen::MatrixXd query_positions;  // [N_node, P_dim]
  GridKind kind = GridKind::regular;
  int nx = 0, ny = 0;          // regular
  int n_lon = 0, n_lat = 0;    // spherical
  Domain domain;

  int size() const { return static_cast<int>(query_positions.rows()); }
  int dim() const { return static_cast<int>(query_positions.cols()); }
};

// Cell-center tensor grid over the box: x_i = lower + (i + 1/2) * width / n.
// A 1-dimensional box requires ny == 1. Point index is i * ny + j.
LatentGrid make_regular_grid(int nx, int ny, const Domain& box);

// Unit-sphere embeddings of n_lon evenly spaced longitudes and n_lat
// latitude-band centers (poles excluded). Point index is j * n_lon + i
// for latitude row j and longitude column i.
LatentGrid make_spherical_grid(int n_lon, int n_lat);

// Radius-graph edges between latent query points and input points.
struct EdgeList {
  // (query_index, input_index) rows, sorted by query then input.
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, 2> pairs;
  Eigen::VectorXi degree;  // per query point
  bool no_edges = false;   // set when the graph is empty overall
  int empty_queries = 0;   // number of query points without neighbors

  std::int64_t edge_count() const { return pairs.rows(); }
};

// Exact fixed-radius neighbor search via uniform spatial hashing with cell
// size = radius. A pair (q, i) is included iff ||query_q - input_i||_2 <= r.
EdgeList build_radius_graph(const PointSet& input, const LatentGrid& query,
                            double radius);

// Sinusoidal features of scalar inputs: for each value v the output column
// holds [sin(w_k v)]_{k=1..m} followed by [cos(w_k v)]_{k=1..m} with
// m = embed_dim / 2 and w_k = 1000 * 10000^(-2k / embed_dim). Multi-column
// inputs embed each coordinate separately and stack the blocks, giving an
// output of shape [K * embed_dim, N] for an [N, K] input.
Eigen::MatrixXd sinusoidal_embed(const Eigen::MatrixXd& values, int embed_dim);

// Frequency ladder used by sinusoidal_embed, exposed for tests.
Eigen::VectorXd sinusoidal_frequencies(int embed_dim);

}  // namespace fieldflow
