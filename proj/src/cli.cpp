#include <Eigen/Core>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "fieldflow/container.hpp"
#include "fieldflow/flow_matching.hpp"
#include "fieldflow/metrics.hpp"
#include "fieldflow/run_config.hpp"

namespace fieldflow {

namespace {

struct PointSource {
  PointSet points;
  int grid_nx = 0, grid_ny = 0;
};

PointSource points_from_config(const RunConfig& cfg) {
  const std::string& file = cfg.get("points.file");
  if (!file.empty()) {
    FunctionBatch b = read_container(file);
    return {b.points, b.grid_nx, b.grid_ny};
  }
  const int gnx = static_cast<int>(cfg.integer("points.grid_nx"));
  const int gny = static_cast<int>(cfg.integer("points.grid_ny"));
  if (gnx > 0 && gny > 0) {
    const int dim = gny == 1 ? 1 : 2;
    LatentGrid grid = make_regular_grid(gnx, gny, Domain::unit_box(dim));
    return {make_point_set(grid.query_positions, grid.domain), gnx, gny};
  }
  const int count = static_cast<int>(cfg.integer("points.count"));
  const int dim = static_cast<int>(cfg.integer("points.dim"));
  if (count < 1) throw UsageError("points.count must be positive");
  if (dim < 1 || dim > 3) throw UsageError("points.dim must be 1, 2, or 3");
  auto engine = make_engine(cfg.seed("data.seed"), 77);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd pos(count, dim);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < dim; ++j) pos(i, j) = unif(engine);
  return {make_point_set(std::move(pos), Domain::unit_box(dim)), 0, 0};
}

FunctionBatch empty_mesh_batch(const PointSource& src) {
  FunctionBatch mesh;
  mesh.points = src.points;
  mesh.f_dim = 1;
  mesh.values.resize(src.points.size(), 0);
  mesh.grid_nx = src.grid_nx;
  mesh.grid_ny = src.grid_ny;
  return mesh;
}

void cmd_gen_data(const RunConfig& cfg) {
  const PointSource src = points_from_config(cfg);
  const int n_train = static_cast<int>(cfg.integer("data.n_train"));
  const int n_test = static_cast<int>(cfg.integer("data.n_test"));
  const std::uint64_t seed = cfg.seed("data.seed");

  auto [train, test] = gen_mesh_gp(src.points, n_train, n_test, seed);
  train.grid_nx = test.grid_nx = src.grid_nx;
  train.grid_ny = test.grid_ny = src.grid_ny;

  const std::string mesh_path = cfg.artifact("paths.mesh", "mesh.ffc");
  const std::string train_path = cfg.artifact("paths.train", "train.ffc");
  const std::string test_path = cfg.artifact("paths.test", "test.ffc");
  const std::string note =
      "mesh-gp length_scale=0.4 nu=1.5 seed=" + std::to_string(seed);
  write_container(mesh_path, empty_mesh_batch(src), "mesh only");
  write_container(train_path, train, note + " split=train");
  write_container(test_path, test, note + " split=test");
  cfg.echo("gen-data");
  std::cout << "wrote " << mesh_path << " (" << src.points.size()
            << " points), " << train_path << " (" << train.n_samples()
            << " samples), " << test_path << " (" << test.n_samples()
            << " samples)\n";
}

void cmd_sample_gp(const RunConfig& cfg) {
  const PointSource src = points_from_config(cfg);
  const GPSpec spec = cfg.gp_spec("gp");
  const int n = static_cast<int>(cfg.integer("sample.n"));
  FunctionBatch batch = sample_gp(spec, src.points, n, cfg.seed("sample.seed"));
  batch.grid_nx = src.grid_nx;
  batch.grid_ny = src.grid_ny;
  const std::string path = cfg.artifact("paths.gp_samples", "gp_samples.ffc");
  std::ostringstream note;
  note << "gp length_scale=" << spec.length_scale << " nu=" << nu_of(spec.smoothness)
       << " variance=" << spec.variance;
  write_container(path, batch, note.str());
  cfg.echo("sample-gp");
  std::cout << "wrote " << path << " (" << batch.n_samples() << " samples on "
            << src.points.size() << " points)\n";
}

void cmd_train(const RunConfig& cfg) {
  const std::string train_path = cfg.artifact("paths.train", "train.ffc");
  const std::string ckpt_path = cfg.artifact("paths.checkpoint", "model.ckpt");
  const std::string opt_path = cfg.artifact("paths.opt_state", "model.opt");
  const std::string loss_path = cfg.artifact("paths.loss", "loss.txt");

  const FunctionBatch dataset = read_container(train_path);
  const TrainConfig tcfg = cfg.train_config();
  const bool resume = cfg.boolean("train.resume");

  TrainState<float> state;
  std::unique_ptr<VelocityModel<float>> model;
  if (resume) {
    model = std::make_unique<VelocityModel<float>>(load_checkpoint<float>(ckpt_path));
    state = load_opt_state<float>(opt_path, model->params.size());
  } else {
    model = std::make_unique<VelocityModel<float>>(cfg.model_config(),
                                                   cfg.seed("train.seed"));
  }
  const int first_epoch = state.epoch;

  const std::vector<double> history =
      train(*model, dataset, tcfg, &state, &std::cout);

  save_checkpoint(ckpt_path, *model);
  save_opt_state(opt_path, state);
  write_loss_table(loss_path, history, first_epoch, first_epoch > 0);
  cfg.echo("train");
  std::cout << "wrote " << ckpt_path << " and " << loss_path;
  if (!history.empty()) std::cout << "; final loss " << history.back();
  std::cout << "\n";
}

void cmd_generate(const RunConfig& cfg) {
  const std::string ckpt_path = cfg.artifact("paths.checkpoint", "model.ckpt");
  std::string pos_path = cfg.get("generate.positions");
  if (pos_path.empty()) pos_path = cfg.artifact("paths.train", "train.ffc");
  const std::string out_path = cfg.artifact("paths.samples", "samples.ffc");

  // The ODE is integrated in double precision; checkpoint parameters upcast
  // exactly.
  VelocityModel<double> model = load_checkpoint<double>(ckpt_path);
  const FunctionBatch source = read_container(pos_path);
  const TrainConfig tcfg = cfg.train_config();
  const SolverConfig solver = cfg.solver_config();
  const int n = static_cast<int>(cfg.integer("generate.n"));
  if (n < 0) throw UsageError("generate.n must be non-negative");

  FunctionBatch out = generate(model, tcfg.base_gp, source.points, n, solver,
                               cfg.seed("generate.seed"));
  out.grid_nx = source.grid_nx;
  out.grid_ny = source.grid_ny;
  write_container(out_path, out, "generated samples");
  cfg.echo("generate");
  std::cout << "wrote " << out_path << " (" << out.n_samples()
            << " samples on " << out.n_points() << " points)\n";
}

void check_shared_discretization(const FunctionBatch& x, const FunctionBatch& y) {
  if (x.n_points() != y.n_points() || x.points.dim() != y.points.dim() ||
      x.f_dim != y.f_dim ||
      !(x.points.positions.array() == y.points.positions.array()).all())
    throw std::runtime_error(
        "eval: discretization mismatch between the two containers");
}

void cmd_eval(const RunConfig& cfg) {
  std::string x_path = cfg.get("eval.x");
  if (x_path.empty()) x_path = cfg.artifact("paths.samples", "samples.ffc");
  std::string y_path = cfg.get("eval.y");
  if (y_path.empty()) y_path = cfg.artifact("paths.test", "test.ffc");
  const std::string report_path = cfg.artifact("paths.report", "metrics.txt");

  FunctionBatch x = read_container(x_path);
  FunctionBatch y = read_container(y_path);
  check_shared_discretization(x, y);

  // The sliced estimator is exact only for equal counts; truncate both to
  // the smaller set.
  const int s = std::min(x.n_samples(), y.n_samples());
  if (s < 2) throw std::runtime_error("eval: need at least 2 samples per container");
  std::vector<int> head(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) head[static_cast<std::size_t>(i)] = i;
  if (x.n_samples() > s) x = select_samples(x, head);
  if (y.n_samples() > s) y = select_samples(y, head);

  const MetricReport report = compute_metrics(x, y, cfg.metric_params());
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report to " + report_path);
  out << serialize_report(report);
  out.close();
  cfg.echo("eval");
  std::cout << "swd_mean = " << report.swd_mean << "\n"
            << "mmd = " << report.mmd << " (bandwidth " << report.mmd_bandwidth
            << ")\n";
  if (report.has_grid_metrics)
    std::cout << "grid: spectra_mse = " << report.grid.spectra_mse
              << ", autocov_mse = " << report.grid.autocov_mse
              << ", density_mse = " << report.grid.density_mse << "\n";
  std::cout << "wrote " << report_path << "\n";
}

std::string heat_color(double v) {
  // Blue (low) through white to red (high).
  v = std::clamp(v, 0.0, 1.0);
  int r, g, b;
  if (v < 0.5) {
    const double u = v * 2.0;
    r = static_cast<int>(255 * u);
    g = static_cast<int>(255 * u);
    b = 255;
  } else {
    const double u = (v - 0.5) * 2.0;
    r = 255;
    g = static_cast<int>(255 * (1.0 - u));
    b = static_cast<int>(255 * (1.0 - u));
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

void write_heatmap_svg(const std::string& path, const FunctionBatch& batch,
                       Eigen::Index sample) {
  const int nx = batch.grid_nx, ny = batch.grid_ny;
  const int cell = 8;
  const float lo = batch.values.col(sample).minCoeff();
  const float hi = batch.values.col(sample).maxCoeff();
  const double span = hi > lo ? static_cast<double>(hi - lo) : 1.0;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << nx * cell
      << "\" height=\"" << ny * cell << "\" viewBox=\"0 0 " << nx * cell << " "
      << ny * cell << "\">\n";
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const double v =
          (static_cast<double>(batch.values(static_cast<Eigen::Index>(i) * ny + j,
                                            sample)) -
           lo) /
          span;
      out << "<rect x=\"" << i * cell << "\" y=\"" << (ny - 1 - j) * cell
          << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
          << heat_color(v) << "\"/>\n";
    }
  out << "</svg>\n";
}

void write_points_csv(const std::string& path, const FunctionBatch& batch,
                      Eigen::Index sample) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  const int dim = batch.points.dim();
  out << (dim == 1 ? "x,value" : dim == 2 ? "x,y,value" : "x,y,z,value") << "\n";
  for (int i = 0; i < batch.n_points(); ++i) {
    for (int j = 0; j < dim; ++j) out << batch.points.positions(i, j) << ",";
    out << batch.values(i, sample) << "\n";
  }
}

void cmd_plot(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.echo("plot");
  bool wrote_any = false;

  const std::string loss_path = cfg.artifact("paths.loss", "loss.txt");
  if (fs::exists(loss_path)) {
    const std::string csv_path = cfg.out_dir() + "/loss.csv";
    std::ifstream in(loss_path);
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + csv_path);
    out << "epoch,loss\n";
    int epoch;
    double loss;
    while (in >> epoch >> loss) out << epoch << "," << loss << "\n";
    std::cout << "wrote " << csv_path << "\n";
    wrote_any = true;
  }

  std::string source_path = cfg.get("plot.source");
  if (source_path.empty()) source_path = cfg.artifact("paths.samples", "samples.ffc");
  if (fs::exists(source_path)) {
    const FunctionBatch batch = read_container(source_path);
    if (batch.n_samples() > 0) {
      if (batch.grid_nx > 0 && batch.grid_ny > 0 && batch.f_dim == 1) {
        const std::string svg_path = cfg.out_dir() + "/sample0.svg";
        write_heatmap_svg(svg_path, batch, 0);
        std::cout << "wrote " << svg_path << "\n";
      } else {
        const std::string csv_path = cfg.out_dir() + "/sample0.csv";
        write_points_csv(csv_path, batch, 0);
        std::cout << "wrote " << csv_path << "\n";
      }
      wrote_any = true;
    }
  }

  const std::string x_path = cfg.get("eval.x");
  const std::string y_path = cfg.get("eval.y");
  if (!x_path.empty() && !y_path.empty()) {
    FunctionBatch x = read_container(x_path);
    FunctionBatch y = read_container(y_path);
    check_shared_discretization(x, y);
    const int s = std::min(x.n_samples(), y.n_samples());
    if (s >= 2) {
      std::vector<int> head(static_cast<std::size_t>(s));
      for (int i = 0; i < s; ++i) head[static_cast<std::size_t>(i)] = i;
      if (x.n_samples() > s) x = select_samples(x, head);
      if (y.n_samples() > s) y = select_samples(y, head);
      const MetricParams mp = cfg.metric_params();

      const std::string cons_path = cfg.out_dir() + "/consistency.csv";
      std::ofstream cons(cons_path, std::ios::trunc);
      if (!cons) throw std::runtime_error("cannot write " + cons_path);
      cons << "ratio,n_points,swd,mmd\n";
      const int n = x.n_points();
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      auto engine = make_engine(mp.seed, 99);
      std::shuffle(order.begin(), order.end(), engine);
      const double ratios[] = {0.25, 0.5, 0.75, 1.0};
      for (int k = 0; k < 4; ++k) {
        const int keep = std::max(1, static_cast<int>(ratios[k] * n));
        std::vector<int> subset(order.begin(), order.begin() + keep);
        std::sort(subset.begin(), subset.end());
        const FunctionBatch xr = select_points(x, subset);
        const FunctionBatch yr = select_points(y, subset);
        const double swd =
            averaged_swd(xr, yr, mp.n_projections, mp.n_run, mp.p,
                         derive_seed(mp.seed, 200 + static_cast<std::uint64_t>(k)))
                .mean;
        bool degenerate = false;
        const double bw = mp.bandwidth_override > 0
                              ? mp.bandwidth_override
                              : median_bandwidth(xr, yr, &degenerate);
        const double mmd = mmd_unbiased(xr, yr, bw);
        cons << ratios[k] << "," << keep << "," << swd << "," << mmd << "\n";
      }
      std::cout << "wrote " << cons_path << "\n";
      wrote_any = true;

      if (x.grid_nx > 0 && x.grid_ny > 0 && x.grid_nx == y.grid_nx &&
          x.grid_ny == y.grid_ny && x.f_dim == 1) {
        const std::string spec_path = cfg.out_dir() + "/spectra.csv";
        std::ofstream spec(spec_path, std::ios::trunc);
        if (!spec) throw std::runtime_error("cannot write " + spec_path);
        const std::vector<double> px = radial_spectrum(x, x.grid_nx, x.grid_ny);
        const std::vector<double> py = radial_spectrum(y, y.grid_nx, y.grid_ny);
        spec << "wavenumber,power_x,power_y\n";
        for (std::size_t r = 0; r < px.size(); ++r)
          spec << r << "," << px[r] << "," << py[r] << "\n";
        std::cout << "wrote " << spec_path << "\n";
      }
    }
  }

  if (!wrote_any)
    std::cout << "nothing to plot: no loss table, sample container, or eval pair\n";
}

void print_usage(std::ostream& out) {
  out << "usage: fieldflow <command> [--key=value ...] [--config FILE]\n"
         "\n"
         "commands:\n"
         "  gen-data   sample a Matern GP dataset on a mesh; writes mesh/train/test\n"
         "  sample-gp  draw GP samples with the configured kernel; writes a container\n"
         "  train      flow-matching training; writes checkpoint, optimizer state, loss\n"
         "  generate   integrate the learned velocity field from base samples\n"
         "  eval       averaged sliced Wasserstein + MMD (+ grid metrics) report\n"
         "  plot       CSV/SVG plot data from existing artifacts\n"
         "\n"
         "Flags override configuration keys of the same dotted name; --config FILE\n"
         "applies a key-value file at its position. Unknown keys are rejected.\n"
         "Environment overrides: FIELDFLOW_OUT_DIR, FIELDFLOW_THREADS.\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  if (args.empty()) {
    print_usage(std::cerr);
    return 1;
  }
  const std::string cmd = args.front();
  args.erase(args.begin());
  if (cmd == "help" || cmd == "--help" || cmd == "-h") {
    print_usage(std::cout);
    return 0;
  }
  try {
    const RunConfig cfg = resolve_run_config(args);
    Eigen::setNbThreads(cfg.threads());
    std::filesystem::create_directories(cfg.out_dir());
    if (cmd == "gen-data") {
      cmd_gen_data(cfg);
    } else if (cmd == "sample-gp") {
      cmd_sample_gp(cfg);
    } else if (cmd == "train") {
      cmd_train(cfg);
    } else if (cmd == "generate") {
      cmd_generate(cfg);
    } else if (cmd == "eval") {
      cmd_eval(cfg);
    } else if (cmd == "plot") {
      cmd_plot(cfg);
    } else {
      throw UsageError("unknown command '" + cmd + "'");
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace fieldflow
