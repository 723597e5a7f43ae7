#include "nnmpc/params_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace nnmpc {

namespace {

static_assert(std::endian::native == std::endian::little,
              "parameter container assumes a little-endian host");

std::string digest_hex(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

// Shapes in declaration order; weights row-major then bias, per layer.
void for_each_scalar(const NetworkParams& params,
                     const std::function<void(double&)>& fn) {
  for (const auto& l : params.layers) {
    auto& W = const_cast<Eigen::MatrixXd&>(l.W);
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) fn(W(r, c));
    auto& b = const_cast<Eigen::VectorXd&>(l.b);
    for (Eigen::Index i = 0; i < b.size(); ++i) fn(b[i]);
  }
}

}  // namespace

void save_params(const std::string& path, const NetworkSpec& spec, const NetworkParams& params) {
  if (params.layers.size() != spec.layers.size())
    throw ParamsIoError("save_params: parameter/spec layer count mismatch");

  nlohmann::json header;
  header["format"] = "nnmpc-params";
  header["version"] = 1;
  header["digest"] = digest_hex(spec.digest());
  header["dtype"] = "float64";
  header["count"] = params.scalar_count();
  header["spec"] = spec.describe();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParamsIoError("save_params: cannot open " + path);
  out << header.dump() << "\n";
  for_each_scalar(params, [&](double& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  });
  if (!out) throw ParamsIoError("save_params: short write to " + path);
}

NetworkParams load_params(const std::string& path, const NetworkSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParamsIoError("load_params: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParamsIoError("load_params: missing header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParamsIoError("load_params: malformed header in " + path + ": " + e.what());
  }
  if (header.value("format", "") != "nnmpc-params")
    throw ParamsIoError("load_params: unrecognized container format in " + path);
  if (header.value("dtype", "") != "float64")
    throw ParamsIoError("load_params: unsupported dtype in " + path);
  const std::string want = digest_hex(spec.digest());
  if (header.value("digest", "") != want)
    throw ParamsIoError("load_params: architecture digest mismatch in " + path + " (file " +
                        header.value("digest", "?") + ", expected " + want + ")");

  // Allocate per the spec, then fill in declaration order.
  NetworkParams params;
  params.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.parametric()) continue;
    const int rows = (l.kind == LayerSpec::Kind::kDense) ? l.dense.out : l.conv.out_channels;
    const int cols = (l.kind == LayerSpec::Kind::kDense)
                         ? l.dense.in
                         : l.conv.in_channels * l.conv.kernel;
    params.layers[i].W.resize(rows, cols);
    params.layers[i].b.resize(rows);
  }
  const std::size_t expected = params.scalar_count();
  if (header.value("count", std::size_t{0}) != expected)
    throw ParamsIoError("load_params: scalar count mismatch in " + path);

  bool short_read = false;
  for_each_scalar(params, [&](double& v) {
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) short_read = true;
  });
  if (short_read) throw ParamsIoError("load_params: truncated payload in " + path);
  char extra;
  if (in.read(&extra, 1)) throw ParamsIoError("load_params: trailing bytes in " + path);
  return params;
}

}  // namespace nnmpc
