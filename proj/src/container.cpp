#include "fieldflow/container.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fieldflow/kvtext.hpp"

namespace fieldflow {

namespace {

constexpr const char* kMagic = "fieldflow-functions";
constexpr std::uint32_t kMaxHeaderLen = 1u << 20;

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string checksum_line(const std::string& body) {
  std::ostringstream os;
  os << "checksum = " << std::hex << fnv1a(body) << "\n";
  return os.str();
}

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4)
    throw std::runtime_error("container " + path + ": missing header length (4 bytes)");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

struct ParsedHeader {
  ContainerInfo info;
  KvDoc doc;
};

ParsedHeader read_and_check_header(std::istream& in, const std::string& path) {
  const std::uint32_t len = read_u32(in, path);
  if (len == 0 || len > kMaxHeaderLen)
    throw std::runtime_error("container " + path +
                             ": implausible header length (endianness mismatch "
                             "or corruption)");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len))
    throw std::runtime_error(
        "container " + path + ": truncated header, missing " +
        std::to_string(static_cast<std::streamsize>(len) - in.gcount()) + " bytes");

  const std::size_t cut = header.rfind("checksum = ");
  if (cut == std::string::npos)
    throw std::runtime_error("container " + path + ": header checksum missing");
  const std::string body = header.substr(0, cut);
  if (checksum_line(body) != header.substr(cut))
    throw std::runtime_error("container " + path + ": header checksum mismatch");

  KvDoc doc = KvDoc::parse(body);
  if (!doc.has("format") || doc.get("format") != kMagic)
    throw std::runtime_error("container " + path +
                             ": wrong format marker (expected " + kMagic + ")");
  ParsedHeader out;
  out.info.version = static_cast<int>(doc.get_int("version"));
  if (out.info.version != 1)
    throw std::runtime_error("container " + path + ": unsupported version " +
                             std::to_string(out.info.version));
  out.info.p_dim = static_cast<int>(doc.get_int("p_dim"));
  out.info.f_dim = static_cast<int>(doc.get_int("f_dim"));
  out.info.n_points = doc.get_int("n_points");
  out.info.n_samples = doc.get_int("n_samples");
  out.info.grid_nx = static_cast<int>(doc.get_int("grid_nx"));
  out.info.grid_ny = static_cast<int>(doc.get_int("grid_ny"));
  out.info.provenance = doc.has("provenance") ? doc.get("provenance") : "";

  const std::string kind = doc.get("domain.kind");
  if (kind == "box") {
    const std::vector<double> lo = doc.get_reals("domain.lower");
    const std::vector<double> hi = doc.get_reals("domain.upper");
    out.info.domain = Domain::box(
        Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size())),
        Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size())));
  } else if (kind == "sphere") {
    out.info.domain = Domain::sphere(doc.get_real("domain.radius"));
  } else {
    throw std::runtime_error("container " + path + ": unknown domain kind '" +
                             kind + "'");
  }
  out.doc = std::move(doc);
  return out;
}

}  // namespace

void write_container(const std::string& path, const FunctionBatch& batch,
                     const std::string& provenance) {
  validate(batch);
  KvDoc doc;
  doc.set("format", kMagic);
  doc.set_int("version", 1);
  doc.set_int("p_dim", batch.points.dim());
  doc.set_int("f_dim", batch.f_dim);
  doc.set_int("n_points", batch.n_points());
  doc.set_int("n_samples", batch.n_samples());
  doc.set_int("grid_nx", batch.grid_nx);
  doc.set_int("grid_ny", batch.grid_ny);
  if (!provenance.empty()) doc.set("provenance", provenance);
  const Domain& dom = batch.points.domain;
  if (dom.kind == DomainKind::box) {
    doc.set("domain.kind", "box");
    doc.set_reals("domain.lower", std::vector<double>(dom.lower.data(),
                                                      dom.lower.data() + dom.lower.size()));
    doc.set_reals("domain.upper", std::vector<double>(dom.upper.data(),
                                                      dom.upper.data() + dom.upper.size()));
  } else {
    doc.set("domain.kind", "sphere");
    doc.set_real("domain.radius", dom.radius);
  }
  const std::string body = doc.serialize();
  const std::string header = body + checksum_line(body);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_container: cannot open " + path);
  write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  // Positions are row-major on disk (point-major); the in-memory matrix is
  // column-major, so stage through a transposed copy.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      pos_rm = batch.points.positions;
  if (pos_rm.size() > 0)
    out.write(reinterpret_cast<const char*>(pos_rm.data()),
              static_cast<std::streamsize>(pos_rm.size() * sizeof(double)));
  if (batch.values.size() > 0)
    out.write(reinterpret_cast<const char*>(batch.values.data()),
              static_cast<std::streamsize>(batch.values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write_container: write failed for " + path);
}

ContainerInfo read_container_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_container_info: cannot open " + path);
  return read_and_check_header(in, path).info;
}

FunctionBatch read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_container: cannot open " + path);
  const ContainerInfo info = read_and_check_header(in, path).info;

  FunctionBatch batch;
  batch.f_dim = info.f_dim;
  batch.grid_nx = info.grid_nx;
  batch.grid_ny = info.grid_ny;
  batch.points.domain = info.domain;

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pos_rm(
      info.n_points, info.p_dim);
  const std::streamsize pos_bytes =
      static_cast<std::streamsize>(pos_rm.size()) * sizeof(double);
  if (pos_bytes > 0) {
    in.read(reinterpret_cast<char*>(pos_rm.data()), pos_bytes);
    if (in.gcount() != pos_bytes)
      throw std::runtime_error("container " + path +
                               ": truncated positions blob, missing " +
                               std::to_string(pos_bytes - in.gcount()) + " bytes");
  }
  batch.points.positions = pos_rm;

  batch.values.resize(static_cast<Eigen::Index>(info.f_dim) * info.n_points,
                      info.n_samples);
  const std::streamsize val_bytes =
      static_cast<std::streamsize>(batch.values.size()) * sizeof(float);
  if (val_bytes > 0) {
    in.read(reinterpret_cast<char*>(batch.values.data()), val_bytes);
    if (in.gcount() != val_bytes)
      throw std::runtime_error("container " + path +
                               ": truncated values blob, missing " +
                               std::to_string(val_bytes - in.gcount()) + " bytes");
  }
  validate(batch);
  return batch;
}

std::pair<FunctionBatch, FunctionBatch> gen_mesh_gp(const PointSet& points,
                                                    int n_train, int n_test,
                                                    std::uint64_t seed) {
  if (n_train < 0 || n_test < 0)
    throw std::invalid_argument("gen_mesh_gp: negative sample count");
  GPSpec spec;
  spec.length_scale = 0.4;
  spec.smoothness = Smoothness::three_halves;
  spec.variance = 1.0;
  spec.distance = DistanceMode::euclidean;
  FunctionBatch all = sample_gp(spec, points, n_train + n_test, seed);
  std::vector<int> train_idx(static_cast<std::size_t>(n_train));
  std::vector<int> test_idx(static_cast<std::size_t>(n_test));
  for (int i = 0; i < n_train; ++i) train_idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < n_test; ++i)
    test_idx[static_cast<std::size_t>(i)] = n_train + i;
  return {select_samples(all, train_idx), select_samples(all, test_idx)};
}

}  // namespace fieldflow
