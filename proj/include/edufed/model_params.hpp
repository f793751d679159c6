#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace edufed {

struct Layer {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;  // row-major
};

/// Ordered collection of named, shaped parameter arrays. Supports the vector
/// space operations needed by optimizers and aggregation rules. Gradients use
/// the same type so they stay shape-congruent with the model they belong to.
class ModelParams {
 public:
  ModelParams() = default;

  Layer& add_layer(std::string name, std::vector<std::size_t> shape, double fill = 0.0);

  std::size_t num_layers() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  Layer& layer(std::size_t i) { return layers_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;
  const Layer& layer(std::string_view name) const;
  Layer& layer(std::string_view name);

  std::span<double> values(std::string_view name) { return layer(name).values; }
  std::span<const double> values(std::string_view name) const { return layer(name).values; }

  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t size() const;
  bool congruent(const ModelParams& other) const;
  ModelParams zeros_like() const;
  void fill(double value);
  bool all_finite() const;

  // Order-sensitive hash of names, shapes and value bits.
  std::uint64_t fingerprint() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<Layer> layers_;
};

using Gradients = ModelParams;

void require_congruent(const ModelParams& a, const ModelParams& b, std::string_view what);

ModelParams params_axpy(double a, const ModelParams& x, const ModelParams& y);
void axpy_inplace(double a, const ModelParams& x, ModelParams& y);
void scale_inplace(double a, ModelParams& x);
double params_dot(const ModelParams& x, const ModelParams& y);
double params_norm(const ModelParams& x);
double params_norm(const ModelParams& x, std::string_view layer);
/// Cosine of the flattened vectors; 0 when either vector is zero.
double params_cosine(const ModelParams& x, const ModelParams& y);
/// max |x - y| over all entries.
double params_max_abs_diff(const ModelParams& x, const ModelParams& y);

// Binary format: text header
//   edufed-params <version>
//   layers <count>
//   <name> <rank> <dim>...
//   end
// followed by the raw little-endian IEEE-754 doubles of every layer in order.
inline constexpr int kParamsFormatVersion = 1;

void save_params(std::ostream& out, const ModelParams& params);
ModelParams load_params(std::istream& in);
void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

}  // namespace edufed
