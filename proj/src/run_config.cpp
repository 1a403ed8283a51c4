#include "fieldflow/run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fieldflow {

KvDoc default_run_config() {
  KvDoc d;
  d.set("out_dir", "out");
  d.set_int("threads", 1);

  d.set_int("points.count", 500);
  d.set_int("points.dim", 2);
  d.set("points.file", "");
  d.set_int("points.grid_nx", 0);
  d.set_int("points.grid_ny", 0);

  d.set_int("data.n_train", 2000);
  d.set_int("data.n_test", 500);
  d.set_int("data.seed", 1);

  d.set_real("gp.length_scale", 0.4);
  d.set_real("gp.nu", 1.5);
  d.set_real("gp.variance", 1.0);
  d.set("gp.distance", "euclidean");
  d.set_real("gp.jitter", 1e-10);

  d.set_int("sample.n", 100);
  d.set_int("sample.seed", 2);

  d.set_int("model.l_dim", 64);
  d.set_int("model.m1", 2);
  d.set_int("model.m2", 1);
  d.set_int("model.heads", 4);
  d.set_real("model.radius", 0.1);
  d.set_int("model.pos_embed_dim", 16);
  d.set_int("model.time_embed_dim", 32);
  d.set_int("model.f_dim", 1);
  d.set_int("model.gno_hidden", 32);
  d.set_int("model.mixer_blocks", 2);
  d.set("model.processor", "none");
  d.set("model.encoder_attention", "cross_fixed_kv");
  d.set("model.decoder_query", "function_plus_position");
  d.set("model.lift_combine", "add");
  d.set("model.grid.kind", "regular");
  d.set_int("model.grid.nx", 8);
  d.set_int("model.grid.ny", 8);
  d.set("model.grid.lower", "0 0");
  d.set("model.grid.upper", "1 1");
  d.set_int("model.grid.n_lon", 32);
  d.set_int("model.grid.n_lat", 16);

  d.set_int("train.epochs", 30);
  d.set_int("train.batch_size", 64);
  d.set_real("train.learning_rate", 1e-4);
  d.set_real("train.lr_decay_gamma", 0.8);
  d.set_int("train.lr_decay_every", 25);
  d.set_real("train.weight_decay", 1e-4);
  d.set_real("train.grad_clip", 1.0);
  d.set_bool("train.use_ot_coupling", true);
  d.set_int("train.seed", 3);
  d.set_bool("train.resume", false);
  d.set_real("train.base_gp.length_scale", 0.05);
  d.set_real("train.base_gp.nu", 0.5);
  d.set_real("train.base_gp.variance", 1.0);
  d.set("train.base_gp.distance", "euclidean");
  d.set_real("train.base_gp.jitter", 1e-10);

  d.set("solver.method", "dormand_prince");
  d.set_int("solver.steps", 100);
  d.set_real("solver.rtol", 1e-5);
  d.set_real("solver.atol", 1e-5);
  d.set_real("solver.initial_step", 1e-2);

  d.set_int("generate.n", 64);
  d.set_int("generate.seed", 4);
  d.set("generate.positions", "");

  d.set_int("metric.n_projections", 256);
  d.set_int("metric.n_run", 10);
  d.set_int("metric.p", 2);
  d.set_int("metric.seed", 5);
  d.set_real("metric.bandwidth", 0.0);

  d.set("eval.x", "");
  d.set("eval.y", "");
  d.set("plot.source", "");

  d.set("paths.train", "");
  d.set("paths.test", "");
  d.set("paths.mesh", "");
  d.set("paths.checkpoint", "");
  d.set("paths.opt_state", "");
  d.set("paths.samples", "");
  d.set("paths.gp_samples", "");
  d.set("paths.report", "");
  d.set("paths.loss", "");
  return d;
}

namespace {

void set_checked(KvDoc& doc, const KvDoc& defaults, const std::string& key,
                 const std::string& value, const std::string& origin) {
  if (!defaults.has(key))
    throw UsageError("unknown configuration key '" + key + "' (" + origin + ")");
  doc.set(key, value);
}

void apply_config_file(KvDoc& doc, const KvDoc& defaults, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  KvDoc parsed;
  try {
    parsed = KvDoc::parse(buf.str());
  } catch (const std::exception& e) {
    throw UsageError("config file " + path + ": " + e.what());
  }
  for (const auto& [key, value] : parsed.entries())
    set_checked(doc, defaults, key, value, "config file " + path);
}

}  // namespace

RunConfig resolve_run_config(const std::vector<std::string>& args) {
  const KvDoc defaults = default_run_config();
  RunConfig cfg;
  cfg.doc = defaults;

  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg.rfind("--", 0) != 0)
      throw UsageError("expected a --key=value flag, got '" + arg + "'");
    std::string key = arg.substr(2);
    std::string value;
    const std::size_t eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= args.size())
        throw UsageError("flag --" + key + " is missing a value");
      value = args[++i];
    }
    if (key.empty()) throw UsageError("empty flag name");
    if (key == "config") {
      apply_config_file(cfg.doc, defaults, value);
    } else {
      set_checked(cfg.doc, defaults, key, value, "command line");
    }
  }

  if (const char* env = std::getenv("FIELDFLOW_OUT_DIR"); env && *env)
    cfg.doc.set("out_dir", env);
  if (const char* env = std::getenv("FIELDFLOW_THREADS"); env && *env)
    cfg.doc.set("threads", env);

  // Surface malformed values as usage errors up front.
  try {
    cfg.model_config();
    cfg.train_config();
    cfg.solver_config();
    cfg.metric_params();
    cfg.gp_spec("gp");
    cfg.threads();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

const std::string& RunConfig::get(const std::string& key) const {
  return doc.get(key);
}

double RunConfig::real(const std::string& key) const { return doc.get_real(key); }

long long RunConfig::integer(const std::string& key) const {
  return doc.get_int(key);
}

bool RunConfig::boolean(const std::string& key) const { return doc.get_bool(key); }

std::uint64_t RunConfig::seed(const std::string& key) const {
  return static_cast<std::uint64_t>(doc.get_int(key));
}

std::string RunConfig::out_dir() const { return doc.get("out_dir"); }

int RunConfig::threads() const {
  const long long t = doc.get_int("threads");
  if (t < 1) throw UsageError("threads must be at least 1");
  return static_cast<int>(t);
}

std::string RunConfig::artifact(const std::string& key,
                                const std::string& fallback) const {
  const std::string& configured = doc.get(key);
  if (!configured.empty()) return configured;
  return out_dir() + "/" + fallback;
}

ModelConfig RunConfig::model_config() const {
  return config_from_kv(doc);
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = static_cast<int>(integer("train.epochs"));
  t.batch_size = static_cast<int>(integer("train.batch_size"));
  t.learning_rate = real("train.learning_rate");
  t.lr_decay_gamma = real("train.lr_decay_gamma");
  t.lr_decay_every = static_cast<int>(integer("train.lr_decay_every"));
  t.weight_decay = real("train.weight_decay");
  t.grad_clip = real("train.grad_clip");
  t.use_ot_coupling = boolean("train.use_ot_coupling");
  t.seed = seed("train.seed");
  t.base_gp = gp_spec("train.base_gp");
  validate(t);
  return t;
}

SolverConfig RunConfig::solver_config() const {
  SolverConfig s;
  s.method = solver_method_from_string(get("solver.method"));
  s.steps = static_cast<int>(integer("solver.steps"));
  s.rtol = real("solver.rtol");
  s.atol = real("solver.atol");
  s.initial_step = real("solver.initial_step");
  validate(s);
  return s;
}

MetricParams RunConfig::metric_params() const {
  MetricParams m;
  m.n_projections = static_cast<int>(integer("metric.n_projections"));
  m.n_run = static_cast<int>(integer("metric.n_run"));
  m.p = static_cast<int>(integer("metric.p"));
  m.seed = seed("metric.seed");
  m.bandwidth_override = real("metric.bandwidth");
  if (m.n_projections < 1 || m.n_run < 1)
    throw UsageError("metric.n_projections and metric.n_run must be positive");
  if (m.p != 1 && m.p != 2) throw UsageError("metric.p must be 1 or 2");
  return m;
}

GPSpec RunConfig::gp_spec(const std::string& prefix) const {
  GPSpec spec;
  spec.length_scale = real(prefix + ".length_scale");
  spec.smoothness = smoothness_from_nu(real(prefix + ".nu"));
  spec.variance = real(prefix + ".variance");
  const std::string& dist = get(prefix + ".distance");
  if (dist == "euclidean") {
    spec.distance = DistanceMode::euclidean;
  } else if (dist == "chordal") {
    spec.distance = DistanceMode::chordal;
  } else {
    throw UsageError("unknown distance mode '" + dist + "' for " + prefix);
  }
  spec.jitter = real(prefix + ".jitter");
  validate(spec);
  return spec;
}

void RunConfig::echo(const std::string& command) const {
  std::filesystem::create_directories(out_dir());
  const std::string path = out_dir() + "/config-" + command + ".txt";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config echo to " + path);
  out << doc.serialize();
}

}  // namespace fieldflow
