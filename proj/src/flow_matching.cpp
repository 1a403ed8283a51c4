#include "fieldflow/flow_matching.hpp"

#include <limits>

namespace fieldflow {

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train: batch_size must be positive");
  if (cfg.use_ot_coupling && cfg.batch_size < 2)
    throw std::invalid_argument("train: batch_size must be at least 2 with coupling");
  if (!(cfg.learning_rate > 0))
    throw std::invalid_argument("train: learning_rate must be positive");
  if (!(cfg.lr_decay_gamma > 0))
    throw std::invalid_argument("train: lr_decay_gamma must be positive");
  if (cfg.lr_decay_every < 1)
    throw std::invalid_argument("train: lr_decay_every must be positive");
  if (cfg.weight_decay < 0)
    throw std::invalid_argument("train: weight_decay must be non-negative");
  validate(cfg.base_gp);
}

void validate(const SolverConfig& cfg) {
  if (cfg.method == SolverMethod::rk4_fixed && cfg.steps < 1)
    throw std::invalid_argument("solver: steps must be at least 1");
  if (!(cfg.rtol > 0) || !(cfg.atol > 0))
    throw std::invalid_argument("solver: tolerances must be positive");
  if (!(cfg.initial_step > 0))
    throw std::invalid_argument("solver: initial_step must be positive");
}

std::string to_string(SolverMethod m) {
  return m == SolverMethod::rk4_fixed ? "rk4_fixed" : "dormand_prince";
}

SolverMethod solver_method_from_string(const std::string& s) {
  if (s == "rk4_fixed") return SolverMethod::rk4_fixed;
  if (s == "dormand_prince") return SolverMethod::dormand_prince;
  throw std::invalid_argument("unknown solver method '" + s + "'");
}

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols())
    throw std::invalid_argument("solve_assignment: cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();

  // Shortest augmenting path with dual potentials; 1-based with column 0 as
  // the virtual start.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] > 0)
      row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return row_to_col;
}

CouplingPlan ot_couple(const FunctionBatch& base, const FunctionBatch& data) {
  if (base.n_samples() != data.n_samples())
    throw std::invalid_argument("ot_couple: batch sizes differ");
  if (base.values.rows() != data.values.rows())
    throw std::invalid_argument("ot_couple: discretizations differ");
  const Eigen::Index B = base.n_samples();
  Eigen::MatrixXd cost(B, B);
  for (Eigen::Index i = 0; i < B; ++i)
    for (Eigen::Index j = 0; j < B; ++j)
      cost(i, j) = (base.values.col(i).cast<double>() -
                    data.values.col(j).cast<double>())
                       .squaredNorm();
  CouplingPlan plan;
  plan.permutation = solve_assignment(cost);
  for (Eigen::Index i = 0; i < B; ++i)
    plan.total_cost += cost(i, plan.permutation[static_cast<std::size_t>(i)]);
  return plan;
}

KvDoc read_opt_state_header(std::istream& in, const std::string& path) {
  unsigned char lenb[4];
  in.read(reinterpret_cast<char*>(lenb), 4);
  if (in.gcount() != 4)
    throw std::runtime_error("optimizer state " + path + ": missing header length");
  const std::uint32_t len = static_cast<std::uint32_t>(lenb[0]) |
                            (static_cast<std::uint32_t>(lenb[1]) << 8) |
                            (static_cast<std::uint32_t>(lenb[2]) << 16) |
                            (static_cast<std::uint32_t>(lenb[3]) << 24);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len))
    throw std::runtime_error("optimizer state " + path + ": truncated header");
  KvDoc doc = KvDoc::parse(header);
  if (!doc.has("format") || doc.get("format") != kOptStateMagic)
    throw std::runtime_error("optimizer state " + path + ": wrong format marker");
  if (doc.get_int("version") != 1)
    throw std::runtime_error("optimizer state " + path + ": unsupported version");
  return doc;
}

void write_loss_table(const std::string& path, const std::vector<double>& losses,
                      int first_epoch, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("write_loss_table: cannot open " + path);
  for (std::size_t i = 0; i < losses.size(); ++i)
    out << (first_epoch + static_cast<int>(i)) << " "
        << KvDoc::format_real(losses[i]) << "\n";
  if (!out) throw std::runtime_error("write_loss_table: write failed for " + path);
}

}  // namespace fieldflow
