#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fieldflow/flow_matching.hpp"
#include "fieldflow/gaussian_field.hpp"
#include "fieldflow/kvtext.hpp"
#include "fieldflow/metrics.hpp"
#include "fieldflow/velocity_model.hpp"

namespace fieldflow {

// Configuration or command-line misuse; the CLI maps this to exit code 1
// (runtime failures exit 2).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// Every run option with its default; unknown keys are rejected on override.
KvDoc default_run_config();

// Resolution order: defaults, then each --config file, then dotted-key flags
// (--key=value or --key value), left to right. Also applies the
// FIELDFLOW_OUT_DIR and FIELDFLOW_THREADS environment overrides.
struct RunConfig {
  KvDoc doc;

  const std::string& get(const std::string& key) const;
  double real(const std::string& key) const;
  long long integer(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;

  std::string out_dir() const;
  int threads() const;
  // Configured path if non-empty, else out_dir/<fallback>.
  std::string artifact(const std::string& key, const std::string& fallback) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  SolverConfig solver_config() const;
  MetricParams metric_params() const;
  GPSpec gp_spec(const std::string& prefix) const;

  // Writes the fully resolved document into the output directory.
  void echo(const std::string& command) const;
};

RunConfig resolve_run_config(const std::vector<std::string>& args);

int run_cli(int argc, char** argv);

}  // namespace fieldflow
