#pragma once

// GKSN layers, MLP baselines and permutation-pooled front ends.
//
// All learnable scalars of a Model live in one flat parameter vector. Layers
// are described by offsets into it, so the same storage backs the scalar
// reference path (templated, usable on tapes) and the batched Eigen path used
// for training.
//
// Parameter block layout, all row-major:
//   GKSN layer (in m, hidden k, out l, residual width k' = l):
//     phi   (m*(B+1)) x k   row j*(B+1) holds the slope of phi_jk,
//                           rows j*(B+1)+1+b the coefficient of knot b
//     psi   (k*(B+1)) x l   same layout for psi_ik
//     w_phi m x k'
//     w_psi l x k'
//   Dense layer: W in x out, then bias out.
//   Pool bank: (W*(B+1)) x M, one univariate function per (pair scalar, entry).

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gksn/invariants.hpp"
#include "gksn/tape.hpp"

namespace gksn {

inline constexpr int kDefaultBasis = 8;
inline constexpr double kKnotLow = -3.0;
inline constexpr double kKnotHigh = 3.0;

/// B knots spread uniformly over [lo, hi].
std::vector<double> uniform_knots(int basis, double lo = kKnotLow, double hi = kKnotHigh);

/// phi(x) = slope * x + sum_k coeffs_k * relu(x - knots_k)
struct UnivariateFunction {
  std::vector<double> knots;
  std::vector<double> coeffs;
  double slope = 0.0;

  /// Throws DimensionError unless knots are strictly increasing and sized
  /// like coeffs.
  void validate() const;
  double operator()(double x) const;
};

double univariate_eval(const UnivariateFunction& f, double x);

enum class ModelKind { kan, mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

/// Per-dimension affine standardization (x - mean) * inv_std.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> inv_std;

  bool empty() const { return mean.empty(); }
  std::size_t size() const { return mean.size(); }
};

/// Min-max scaling of energies onto [0, 1].
struct OutputScaler {
  double min = 0.0;
  double max = 1.0;

  double normalize(double e) const { return (e - min) / (max - min); }
  double denormalize(double y) const { return min + y * (max - min); }
};

struct GksnBlock {
  int in = 0, hidden = 0, out = 0;
  std::size_t phi = 0, psi = 0, w_phi = 0, w_psi = 0, end = 0;
};

struct DenseBlock {
  int in = 0, out = 0;
  bool activation = true;
  std::size_t weight = 0, bias = 0, end = 0;
};

struct PoolBlock {
  int pair_width = 0;  // scalars per pair (W)
  int entries = 0;     // bank size (M)
  std::size_t bank = 0, end = 0;
};

/// Architecture choices before parameters exist.
struct ModelSpec {
  ModelKind kind = ModelKind::kan;
  std::vector<int> hidden = {16, 16};  // KAN default; MLP default is {128, 128}
  bool perm = false;
  int pool_entries = 16;
  int basis = kDefaultBasis;

  static ModelSpec defaults(ModelKind kind, bool perm);
};

class Model {
 public:
  Model() = default;

  ModelKind kind() const { return kind_; }
  bool perm() const { return pool_.has_value(); }
  const FeatureConfig& feature_config() const { return features_; }
  const Metric& metric() const { return metric_; }
  int basis() const { return static_cast<int>(knots_.size()); }
  const std::vector<double>& knots() const { return knots_; }
  /// Layer widths [input, hidden..., 1]; the input of a pooled model is M.
  const std::vector<int>& widths() const { return widths_; }
  Eigen::Index frame_m() const { return m_; }
  Eigen::Index frame_n() const { return n_; }

  const std::vector<GksnBlock>& gksn_layers() const { return gksn_; }
  const std::vector<DenseBlock>& dense_layers() const { return dense_; }
  const std::optional<PoolBlock>& pool() const { return pool_; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  std::size_t param_count() const { return params_.size(); }

  /// Standardizes the first-layer inputs (features, or pair scalars when pooled).
  const Standardizer& input_norm() const { return input_norm_; }
  void set_input_norm(Standardizer s);
  const OutputScaler& scaler() const { return scaler_; }
  void set_scaler(OutputScaler s) { scaler_ = s; }

  /// Free-form string metadata carried through checkpoints (seed, split...).
  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

  /// Scalars the standardizer acts on: feature length, or W for pooled models.
  int raw_input_width() const;

  /// Builds the layer map for frames of m points in n dimensions. Parameters
  /// are zero; call init_params() for a random start.
  static Model build(const ModelSpec& spec, const FeatureConfig& features, const Metric& metric,
                     Eigen::Index m, Eigen::Index n);

  /// Random initialization from `seed`.
  void init_params(std::uint64_t seed);

  /// Univariate function views into the parameter vector.
  UnivariateFunction phi(std::size_t layer, int j, int k) const;
  UnivariateFunction psi(std::size_t layer, int i, int k) const;
  UnivariateFunction bank(int q, int w) const;

 private:
  friend Model load_checkpoint_json(const std::string& text);

  ModelKind kind_ = ModelKind::kan;
  FeatureConfig features_;
  Metric metric_;
  Eigen::Index m_ = 0, n_ = 0;
  std::vector<double> knots_;
  std::vector<int> widths_;
  std::vector<GksnBlock> gksn_;
  std::vector<DenseBlock> dense_;
  std::optional<PoolBlock> pool_;
  std::vector<double> params_;
  Standardizer input_norm_;
  OutputScaler scaler_;
  std::map<std::string, std::string> meta_;
};

std::size_t param_count(const Model& model);

// ---------------------------------------------------------------------------
// Scalar reference path.

/// Pool bank of univariate functions indexed by (entry q, pair scalar w).
struct PoolBank {
  int entries = 0;
  int pair_width = 0;
  std::vector<UnivariateFunction> functions;  // q-major

  const UnivariateFunction& at(int q, int w) const { return functions[q * pair_width + w]; }
  /// Bank where entry q applies the same function to every pair scalar.
  static PoolBank shared(const std::vector<UnivariateFunction>& bank, int pair_width);
};

/// For each entry q: sum over pairs and pair scalars of bank(q, w)(s). Pair
/// contributions are accumulated in sorted order, so the result is exactly
/// invariant under row permutations. Rejects node_index = true.
std::vector<double> pooled_features(const Frame& frame, const PoolBank& bank,
                                    const FeatureConfig& config, const Metric& metric);

/// One GKSN layer over explicit univariate functions (phi is m x k
/// row-major, psi l x k row-major, w_phi m x k', w_psi l x k').
struct GksnLayer {
  int in = 0, hidden = 0, out = 0, residual = 0;
  std::vector<UnivariateFunction> phi;
  std::vector<UnivariateFunction> psi;
  Eigen::MatrixXd w_phi;
  Eigen::MatrixXd w_psi;
};

Eigen::VectorXd gksn_forward(const GksnLayer& layer, const Eigen::VectorXd& z);

/// Explicit copy of GKSN layer `index` of a KAN model.
GksnLayer extract_layer(const Model& model, std::size_t index);

/// Normalized energy for an already standardized head input.
double model_forward(const Model& model, std::span<const double> head_input);

/// Normalized energy of a frame (featurize, standardize, head).
double model_energy(const Model& model, const Frame& frame);

/// Head input of a frame: standardized features, or pooled values.
std::vector<double> head_input(const Model& model, const Frame& frame);

/// -grad_coords of the normalized energy, by reverse mode through the
/// featurization. Throws Error when a cos/sin feature is degenerate.
Eigen::MatrixXd forces(const Model& model, const Frame& frame);

/// Energy and gradient w.r.t. all parameters on a tape.
double energy_param_gradient(const Model& model, const Frame& frame, std::span<double> gradient);

/// Generic energy: coordinates and parameters may be doubles or tape
/// variables. `degenerate` is set when cos/sin hit a zero norm.
template <class T, class P>
T energy_generic(const Model& model, std::span<const P> params, std::span<const T> coords,
                 std::span<const int> types, bool& degenerate);

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON, bit-exact round trip.

std::string save_checkpoint_json(const Model& model);
Model load_checkpoint_json(const std::string& text);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace gksn

#include "gksn/network_impl.hpp"
