#include "edufed/model_params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "edufed/errors.hpp"
#include "edufed/rng.hpp"

namespace edufed {

Layer& ModelParams::add_layer(std::string name, std::vector<std::size_t> shape, double fill) {
  if (find(name)) throw ShapeError("duplicate layer name '" + name + "'");
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        std::multiplies<>());
  layers_.push_back(Layer{std::move(name), std::move(shape), std::vector<double>(n, fill)});
  return layers_.back();
}

std::optional<std::size_t> ModelParams::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  return std::nullopt;
}

const Layer& ModelParams::layer(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ShapeError("no layer named '" + std::string(name) + "'");
  return layers_[*i];
}

Layer& ModelParams::layer(std::string_view name) {
  auto i = find(name);
  if (!i) throw ShapeError("no layer named '" + std::string(name) + "'");
  return layers_[*i];
}

std::size_t ModelParams::size() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.values.size();
  return n;
}

bool ModelParams::congruent(const ModelParams& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name != other.layers_[i].name || layers_[i].shape != other.layers_[i].shape) {
      return false;
    }
  }
  return true;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  out.layers_.reserve(layers_.size());
  for (const auto& l : layers_) {
    out.layers_.push_back(Layer{l.name, l.shape, std::vector<double>(l.values.size(), 0.0)});
  }
  return out;
}

void ModelParams::fill(double value) {
  for (auto& l : layers_) std::fill(l.values.begin(), l.values.end(), value);
}

bool ModelParams::all_finite() const {
  for (const auto& l : layers_) {
    for (double v : l.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::uint64_t ModelParams::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) { h = splitmix64(h ^ v); };
  for (const auto& l : layers_) {
    for (char c : l.name) mix(static_cast<unsigned char>(c));
    for (std::size_t d : l.shape) mix(d);
    for (double v : l.values) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!a.congruent(b)) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i].values;
    const auto& y = b.layers_[i].values;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

void require_congruent(const ModelParams& a, const ModelParams& b, std::string_view what) {
  if (!a.congruent(b)) {
    throw ShapeError(std::string(what) + ": parameter collections are not shape-congruent");
  }
}

ModelParams params_axpy(double a, const ModelParams& x, const ModelParams& y) {
  ModelParams out = y;
  axpy_inplace(a, x, out);
  return out;
}

void axpy_inplace(double a, const ModelParams& x, ModelParams& y) {
  require_congruent(x, y, "axpy");
  for (std::size_t i = 0; i < x.num_layers(); ++i) {
    const auto& xs = x.layer(i).values;
    auto& ys = y.layer(i).values;
    for (std::size_t j = 0; j < xs.size(); ++j) ys[j] += a * xs[j];
  }
}

void scale_inplace(double a, ModelParams& x) {
  for (std::size_t i = 0; i < x.num_layers(); ++i) {
    for (double& v : x.layer(i).values) v *= a;
  }
}

double params_dot(const ModelParams& x, const ModelParams& y) {
  require_congruent(x, y, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < x.num_layers(); ++i) {
    const auto& xs = x.layer(i).values;
    const auto& ys = y.layer(i).values;
    for (std::size_t j = 0; j < xs.size(); ++j) s += xs[j] * ys[j];
  }
  return s;
}

double params_norm(const ModelParams& x) { return std::sqrt(params_dot(x, x)); }

double params_norm(const ModelParams& x, std::string_view layer) {
  double s = 0.0;
  for (double v : x.layer(layer).values) s += v * v;
  return std::sqrt(s);
}

double params_cosine(const ModelParams& x, const ModelParams& y) {
  const double nx = params_norm(x);
  const double ny = params_norm(y);
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return std::clamp(params_dot(x, y) / (nx * ny), -1.0, 1.0);
}

double params_max_abs_diff(const ModelParams& x, const ModelParams& y) {
  require_congruent(x, y, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < x.num_layers(); ++i) {
    const auto& xs = x.layer(i).values;
    const auto& ys = y.layer(i).values;
    for (std::size_t j = 0; j < xs.size(); ++j) m = std::max(m, std::abs(xs[j] - ys[j]));
  }
  return m;
}

namespace {

constexpr std::string_view kMagic = "edufed-params";

void write_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

double read_le(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) {
    throw FormatError("parameter file truncated");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_params(std::ostream& out, const ModelParams& params) {
  out << kMagic << ' ' << kParamsFormatVersion << '\n';
  out << "layers " << params.num_layers() << '\n';
  for (const auto& l : params.layers()) {
    out << l.name << ' ' << l.shape.size();
    for (std::size_t d : l.shape) out << ' ' << d;
    out << '\n';
  }
  out << "end\n";
  for (const auto& l : params.layers()) {
    for (double v : l.values) write_le(out, v);
  }
  if (!out) throw FormatError("failed writing parameter file");
}

ModelParams load_params(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty parameter file");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = -1;
    hs >> magic >> version;
    if (magic != kMagic) throw FormatError("not an edufed parameter file (bad magic)");
    if (version != kParamsFormatVersion) {
      throw FormatError("unsupported parameter format version " + std::to_string(version) +
                        " (expected " + std::to_string(kParamsFormatVersion) + ")");
    }
  }
  std::size_t count = 0;
  {
    if (!std::getline(in, line)) throw FormatError("parameter header truncated");
    std::istringstream hs(line);
    std::string tag;
    if (!(hs >> tag >> count) || tag != "layers") throw FormatError("bad layer count line");
  }
  ModelParams params;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw FormatError("parameter header truncated");
    std::istringstream hs(line);
    std::string name;
    std::size_t rank = 0;
    if (!(hs >> name >> rank) || rank > 8) throw FormatError("bad layer line '" + line + "'");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
      if (!(hs >> d)) throw FormatError("bad layer shape in '" + line + "'");
    }
    params.add_layer(name, shape);
  }
  if (!std::getline(in, line) || line != "end") throw FormatError("parameter header not terminated");
  for (std::size_t i = 0; i < params.num_layers(); ++i) {
    for (double& v : params.layer(i).values) v = read_le(in);
  }
  return params;
}

void save_params(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  save_params(out, params);
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open parameter file " + path);
  return load_params(in);
}

}  // namespace edufed
