#include "fieldflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace fieldflow {

Domain Domain::box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  if (lower.size() != upper.size())
    throw std::invalid_argument("Domain::box: lower/upper size mismatch");
  if (lower.size() < 1 || lower.size() > 3)
    throw std::invalid_argument("Domain::box: dimension must be 1, 2 or 3");
  for (int i = 0; i < lower.size(); ++i)
    if (!(lower[i] < upper[i]))
      throw std::invalid_argument("Domain::box: requires lower < upper componentwise");
  Domain d;
  d.kind = DomainKind::box;
  d.lower = lower;
  d.upper = upper;
  return d;
}

Domain Domain::unit_box(int dim) {
  return box(Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim));
}

Domain Domain::sphere(double radius) {
  if (!(radius > 0))
    throw std::invalid_argument("Domain::sphere: radius must be positive");
  Domain d;
  d.kind = DomainKind::sphere;
  d.radius = radius;
  return d;
}

int Domain::dim() const {
  return kind == DomainKind::sphere ? 3 : static_cast<int>(lower.size());
}

void validate(const PointSet& points) {
  const int n = points.size();
  const int p = points.dim();
  if (p < 1 || p > 3)
    throw std::invalid_argument("PointSet: P_dim must be 1, 2 or 3");
  if (!points.positions.allFinite())
    throw std::invalid_argument("PointSet: non-finite coordinate");
  if (points.domain.dim() != p)
    throw std::invalid_argument("PointSet: domain dimension mismatch");
  if (points.domain.kind == DomainKind::box) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j)
        if (points.positions(i, j) < points.domain.lower[j] ||
            points.positions(i, j) > points.domain.upper[j])
          throw std::invalid_argument("PointSet: position outside box domain");
  } else {
    const double r = points.domain.radius;
    for (int i = 0; i < n; ++i) {
      double nrm = points.positions.row(i).norm();
      if (std::abs(nrm - r) > 1e-9 * r)
        throw std::invalid_argument("PointSet: position off the sphere surface");
    }
  }
}

PointSet make_point_set(Eigen::MatrixXd positions, Domain domain) {
  PointSet ps;
  ps.positions = std::move(positions);
  ps.domain = std::move(domain);
  validate(ps);
  return ps;
}

LatentGrid make_regular_grid(int nx, int ny, const Domain& box) {
  if (nx < 1 || ny < 1)
    throw std::invalid_argument("make_regular_grid: nx, ny must be >= 1");
  if (box.kind != DomainKind::box)
    throw std::invalid_argument("make_regular_grid: requires a box domain");
  const int p = box.dim();
  if (p == 1 && ny != 1)
    throw std::invalid_argument("make_regular_grid: 1D box requires ny == 1");
  if (p > 2)
    throw std::invalid_argument("make_regular_grid: box dimension must be 1 or 2");

  LatentGrid grid;
  grid.kind = GridKind::regular;
  grid.nx = nx;
  grid.ny = ny;
  grid.domain = box;
  grid.query_positions.resize(static_cast<Eigen::Index>(nx) * ny, p);
  const double wx = box.upper[0] - box.lower[0];
  for (int i = 0; i < nx; ++i) {
    const double x = box.lower[0] + (i + 0.5) * wx / nx;
    if (p == 1) {
      grid.query_positions(i, 0) = x;
    } else {
      const double wy = box.upper[1] - box.lower[1];
      for (int j = 0; j < ny; ++j) {
        const double y = box.lower[1] + (j + 0.5) * wy / ny;
        grid.query_positions(static_cast<Eigen::Index>(i) * ny + j, 0) = x;
        grid.query_positions(static_cast<Eigen::Index>(i) * ny + j, 1) = y;
      }
    }
  }
  return grid;
}

LatentGrid make_spherical_grid(int n_lon, int n_lat) {
  if (n_lon < 1 || n_lat < 1)
    throw std::invalid_argument("make_spherical_grid: n_lon, n_lat must be >= 1");
  LatentGrid grid;
  grid.kind = GridKind::spherical_lat_lon;
  grid.n_lon = n_lon;
  grid.n_lat = n_lat;
  grid.domain = Domain::sphere(1.0);
  grid.query_positions.resize(static_cast<Eigen::Index>(n_lon) * n_lat, 3);
  const double pi = std::acos(-1.0);
  for (int j = 0; j < n_lat; ++j) {
    // latitude band centers, exact poles excluded
    const double lat = -pi / 2 + (j + 0.5) * pi / n_lat;
    for (int i = 0; i < n_lon; ++i) {
      const double lon = 2 * pi * i / n_lon;
      const Eigen::Index row = static_cast<Eigen::Index>(j) * n_lon + i;
      grid.query_positions(row, 0) = std::cos(lon) * std::cos(lat);
      grid.query_positions(row, 1) = std::sin(lon) * std::cos(lat);
      grid.query_positions(row, 2) = std::sin(lat);
    }
  }
  return grid;
}

namespace {

struct CellKey {
  std::int64_t c[3];
  bool operator==(const CellKey& o) const {
    return c[0] == o.c[0] && c[1] == o.c[1] && c[2] == o.c[2];
  }
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 0; i < 3; ++i) {
      h ^= static_cast<std::uint64_t>(k.c[i]);
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Eigen::MatrixXd& pos, Eigen::Index row, int dim,
                double cell) {
  CellKey k{{0, 0, 0}};
  for (int d = 0; d < dim; ++d)
    k.c[d] = static_cast<std::int64_t>(std::floor(pos(row, d) / cell));
  return k;
}

}  // namespace

EdgeList build_radius_graph(const PointSet& input, const LatentGrid& query,
                            double radius) {
  if (!(radius > 0))
    throw std::invalid_argument("build_radius_graph: radius must be positive");
  const int p = input.dim();
  if (p != query.dim())
    throw std::invalid_argument("build_radius_graph: dimension mismatch");

  const Eigen::Index n_in = input.positions.rows();
  const Eigen::Index n_q = query.query_positions.rows();
  const double r2 = radius * radius;

  std::unordered_map<CellKey, std::vector<std::int32_t>, CellKeyHash> cells;
  cells.reserve(static_cast<std::size_t>(n_in));
  for (Eigen::Index i = 0; i < n_in; ++i)
    cells[cell_of(input.positions, i, p, radius)].push_back(
        static_cast<std::int32_t>(i));

  EdgeList edges;
  edges.degree = Eigen::VectorXi::Zero(n_q);
  std::vector<std::int32_t> qs, is;
  std::vector<std::int32_t> hits;
  for (Eigen::Index q = 0; q < n_q; ++q) {
    hits.clear();
    const CellKey base = cell_of(query.query_positions, q, p, radius);
    CellKey k;
    const int span0 = p > 0 ? 1 : 0, span1 = p > 1 ? 1 : 0, span2 = p > 2 ? 1 : 0;
    for (std::int64_t dx = -span0; dx <= span0; ++dx)
      for (std::int64_t dy = -span1; dy <= span1; ++dy)
        for (std::int64_t dz = -span2; dz <= span2; ++dz) {
          k.c[0] = base.c[0] + dx;
          k.c[1] = base.c[1] + dy;
          k.c[2] = base.c[2] + dz;
          auto it = cells.find(k);
          if (it == cells.end()) continue;
          for (std::int32_t i : it->second) {
            double d2 = (input.positions.row(i) - query.query_positions.row(q))
                            .squaredNorm();
            if (d2 <= r2) hits.push_back(i);
          }
        }
    std::sort(hits.begin(), hits.end());
    edges.degree[q] = static_cast<int>(hits.size());
    if (hits.empty()) ++edges.empty_queries;
    for (std::int32_t i : hits) {
      qs.push_back(static_cast<std::int32_t>(q));
      is.push_back(i);
    }
  }

  edges.pairs.resize(static_cast<Eigen::Index>(qs.size()), 2);
  for (std::size_t e = 0; e < qs.size(); ++e) {
    edges.pairs(static_cast<Eigen::Index>(e), 0) = qs[e];
    edges.pairs(static_cast<Eigen::Index>(e), 1) = is[e];
  }
  edges.no_edges = qs.empty();
  return edges;
}

Eigen::VectorXd sinusoidal_frequencies(int embed_dim) {
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_frequencies: embed_dim must be even and >= 2");
  const int half = embed_dim / 2;
  Eigen::VectorXd w(half);
  for (int k = 1; k <= half; ++k)
    w[k - 1] = 1000.0 * std::pow(10000.0, -2.0 * k / embed_dim);
  return w;
}

Eigen::MatrixXd sinusoidal_embed(const Eigen::MatrixXd& values, int embed_dim) {
  const Eigen::VectorXd w = sinusoidal_frequencies(embed_dim);
  const int half = embed_dim / 2;
  const Eigen::Index n = values.rows();
  const Eigen::Index coords = values.cols();
  Eigen::MatrixXd out(coords * embed_dim, n);
  for (Eigen::Index c = 0; c < coords; ++c)
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < half; ++k) {
        const double phase = w[k] * values(i, c);
        out(c * embed_dim + k, i) = std::sin(phase);
        out(c * embed_dim + half + k, i) = std::cos(phase);
      }
  return out;
}

}  // namespace fieldflow
