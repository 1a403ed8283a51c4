#include "fieldflow/kvtext.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

namespace fieldflow {

namespace {

std::string trim(const std::string& s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

int KvDoc::find(const std::string& key) const {
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].first == key) return static_cast<int>(i);
  return -1;
}

void KvDoc::set(const std::string& key, std::string value) {
  int i = find(key);
  if (i >= 0)
    entries_[i].second = std::move(value);
  else
    entries_.emplace_back(key, std::move(value));
}

std::string KvDoc::format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void KvDoc::set_real(const std::string& key, double v) { set(key, format_real(v)); }

void KvDoc::set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }

void KvDoc::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

void KvDoc::set_reals(const std::string& key, const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_real(v[i]);
  }
  set(key, std::move(out));
}

bool KvDoc::has(const std::string& key) const { return find(key) >= 0; }

const std::string& KvDoc::get(const std::string& key) const {
  int i = find(key);
  if (i < 0) throw std::runtime_error("kvtext: missing key '" + key + "'");
  return entries_[i].second;
}

double KvDoc::get_real(const std::string& key) const {
  const std::string& s = get(key);
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("kvtext: key '" + key + "' is not a real: '" + s + "'");
  }
}

long long KvDoc::get_int(const std::string& key) const {
  const std::string& s = get(key);
  try {
    size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("kvtext: key '" + key + "' is not an integer: '" + s + "'");
  }
}

bool KvDoc::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::runtime_error("kvtext: key '" + key + "' is not a bool: '" + s + "'");
}

std::vector<double> KvDoc::get_reals(const std::string& key) const {
  std::istringstream in(get(key));
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof())
    throw std::runtime_error("kvtext: key '" + key + "' is not a real list");
  return out;
}

std::string KvDoc::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

KvDoc KvDoc::parse(const std::string& text) {
  KvDoc doc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("kvtext: line " + std::to_string(lineno) +
                               ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("kvtext: line " + std::to_string(lineno) + ": empty key");
    doc.set(key, std::move(value));
  }
  return doc;
}

}  // namespace fieldflow
