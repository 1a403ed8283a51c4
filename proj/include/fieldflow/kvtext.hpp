#pragma once

#include <string>
#include <utility>
#include <vector>

namespace fieldflow {

// Flat, ordered key -> value text document; the common carrier for run
// configs, container headers, checkpoints and metric reports. Keys are dotted
// paths ("train.learning_rate"); a value is the remainder of the line after
// "=", trimmed. '#' starts a comment, blank lines are skipped. Serialization
// is canonical: insertion order, one "key = value" per line.
class KvDoc {
 public:
  void set(const std::string& key, std::string value);
  void set_real(const std::string& key, double v);
  void set_int(const std::string& key, long long v);
  void set_bool(const std::string& key, bool v);
  void set_reals(const std::string& key, const std::vector<double>& v);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_real(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_reals(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string serialize() const;
  static KvDoc parse(const std::string& text);

  // Shortest decimal that round-trips the double exactly.
  static std::string format_real(double v);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  int find(const std::string& key) const;
};

}  // namespace fieldflow
