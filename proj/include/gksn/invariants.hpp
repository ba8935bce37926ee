#pragma once

// Symmetry-invariant scalar features of point clouds.
//
// The feature code is templated on the scalar type so that the same path
// runs on plain doubles and on tape variables (for forces and gradient
// checks). Coordinates are passed row-major, m rows of n entries.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gksn/error.hpp"
#include "gksn/tape.hpp"

namespace gksn {

/// One configuration: m points in n dimensions.
struct Frame {
  Eigen::MatrixXd coords;           // m x n
  std::vector<int> types;           // empty, or one label per point
  std::optional<double> energy;

  Eigen::Index m() const { return coords.rows(); }
  Eigen::Index n() const { return coords.cols(); }
  bool has_types() const { return !types.empty(); }

  /// Throws DimensionError when the frame breaks its invariants.
  void validate() const;
};

enum class MetricKind { euclidean, minkowski, bilinear };

/// Inner-product signature. Minkowski uses diag(1, -1, ..., -1).
class Metric {
 public:
  Metric() = default;
  static Metric euclidean() { return Metric(); }
  static Metric minkowski() {
    Metric m;
    m.kind_ = MetricKind::minkowski;
    return m;
  }
  /// Throws DimensionError unless `a` is square and symmetric.
  static Metric bilinear(Eigen::MatrixXd a);

  MetricKind kind() const noexcept { return kind_; }
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }

  /// Explicit n x n form matrix.
  Eigen::MatrixXd form(Eigen::Index n) const;
  /// Throws DimensionError when the metric cannot act on n-vectors.
  void check_dimension(Eigen::Index n) const;

  std::string name() const;
  static Metric parse(const std::string& name);

  template <class T>
  T inner(std::span<const T> x, std::span<const T> y) const;

 private:
  MetricKind kind_ = MetricKind::euclidean;
  Eigen::MatrixXd matrix_;
};

enum class Feature : std::uint8_t { n1, n12, inner, outer, cos, sin };

inline constexpr std::array<Feature, 6> kAllFeatures = {
    Feature::n1, Feature::n12, Feature::inner, Feature::outer, Feature::cos, Feature::sin};

class FeatureSet {
 public:
  constexpr FeatureSet() = default;
  constexpr FeatureSet(std::initializer_list<Feature> fs) {
    for (Feature f : fs) bits_ |= bit(f);
  }
  constexpr bool has(Feature f) const { return (bits_ & bit(f)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool operator==(const FeatureSet&) const = default;

  /// Scalars emitted per pair (n1 contributes two).
  int width() const;
  /// Comma-separated names in canonical order, e.g. "n1,n12,inner,outer".
  std::string to_string() const;
  static FeatureSet parse(const std::string& list);

 private:
  static constexpr std::uint8_t bit(Feature f) { return std::uint8_t(1u << unsigned(f)); }
  std::uint8_t bits_ = 0;
};

const char* feature_name(Feature f);

/// Default extended feature set: n1, n12, inner, outer.
inline constexpr FeatureSet kDefaultFeatures{Feature::n1, Feature::n12, Feature::inner,
                                             Feature::outer};

struct FeatureConfig {
  bool node_index = false;  // first model flag
  bool linear = true;       // second model flag: pairs against the first n points only
  FeatureSet features = kDefaultFeatures;
  bool center = true;
  bool include_types = false;

  /// Scalars per pair including index and type columns.
  int pair_width() const;
  int pair_count(Eigen::Index m, Eigen::Index n) const;
  int output_length(Eigen::Index m, Eigen::Index n) const { return pair_count(m, n) * pair_width(); }
  /// Throws DimensionError when the config cannot featurize an m x n frame.
  void validate(Eigen::Index m, Eigen::Index n) const;
  /// The "(T,F)" flag notation: (node_index, linear).
  std::string flag_string() const;
};

template <class T>
struct Features {
  std::vector<T> values;
  bool degenerate = false;  // a cos/sin feature hit a zero-norm operand
};

// ---------------------------------------------------------------------------
// Non-templated API on frames.

/// Subtracts the column means. Means are accumulated in sorted order so the
/// result does not depend on row order.
Frame center(const Frame& frame);

/// Entry (i, j) = x_i^T L x_j for the metric's form L. Exactly symmetric.
Eigen::MatrixXd gram(const Frame& frame, const Metric& metric);
Eigen::MatrixXd gram(const Eigen::MatrixXd& coords, const Metric& metric);

/// First n rows of the coordinates. Throws DimensionError when m < n.
Eigen::MatrixXd basis_subset(const Frame& frame, Eigen::Index n);

Features<double> pair_features(std::span<const double> x, std::span<const double> y,
                               const Metric& metric, FeatureSet features);

Features<double> featurize(const Frame& frame, const FeatureConfig& config, const Metric& metric);

/// XYt * pinv(YYt) * XYt^T with singular values below 1e-10 * sigma_max
/// treated as zero. Throws on non-finite input or mismatched shapes.
Eigen::MatrixXd reconstruct_gram(const Eigen::MatrixXd& xyt, const Eigen::MatrixXd& yyt);

/// Moore-Penrose pseudo-inverse via SVD with relative cutoff `rel_tol`.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& a, double rel_tol = 1e-10);

/// Row order sorted by descending signed norm, ties broken lexicographically
/// on the coordinates. Depends only on the multiset of rows.
std::vector<Eigen::Index> canonical_row_order(const Eigen::MatrixXd& coords, const Metric& metric);

// ---------------------------------------------------------------------------
// Templated implementation.

namespace detail {
template <class T>
T constant_like(const T& like, double v);
}  // namespace detail

template <class T>
T Metric::inner(std::span<const T> x, std::span<const T> y) const {
  using ad::value_of;
  if constexpr (std::is_same_v<T, ad::Var>) {
    if (kind_ == MetricKind::euclidean) return ad::dot(x, y);
  }
  switch (kind_) {
    case MetricKind::euclidean: {
      T acc = x[0] * y[0];
      for (std::size_t i = 1; i < x.size(); ++i) acc = acc + x[i] * y[i];
      return acc;
    }
    case MetricKind::minkowski: {
      T acc = x[0] * y[0];
      for (std::size_t i = 1; i < x.size(); ++i) acc = acc - x[i] * y[i];
      return acc;
    }
    case MetricKind::bilinear: {
      std::optional<T> acc;
      for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) {
          const double a = matrix_(Eigen::Index(i), Eigen::Index(j));
          if (a == 0.0) continue;
          T term = x[i] * y[j] * a;
          acc = acc ? *acc + term : term;
        }
      }
      return acc ? *acc : detail::constant_like(x[0], 0.0);
    }
  }
  return detail::constant_like(x[0], 0.0);
}

namespace detail {

template <class T>
T constant_like(const T& like, double v) {
  if constexpr (std::is_same_v<T, ad::Var>) {
    return like.tape->constant(v);
  } else {
    (void)like;
    return v;
  }
}

// sign(q) * sqrt(|q|); equals the usual norm when q >= 0.
template <class T>
T signed_root(const T& q) {
  using ad::value_of;
  using std::sqrt;
  if (value_of(q) >= 0.0) return sqrt(q);
  return -sqrt(-q);
}

template <class T>
T abs_of(const T& q) {
  using ad::value_of;
  if (value_of(q) >= 0.0) return q;
  return -q;
}

}  // namespace detail

/// Appends the selected per-pair scalars to `out` in canonical order:
/// n1(x), n1(y), n12, inner, outer, cos, sin.
template <class T>
void append_pair_features(std::span<const T> x, std::span<const T> y, const Metric& metric,
                          FeatureSet features, std::vector<T>& out, bool& degenerate) {
  using ad::max0;
  using ad::value_of;
  using std::sqrt;

  const T qx = metric.inner(x, x);
  const T qy = metric.inner(y, y);
  const T xy = metric.inner(x, y);
  const T nx = detail::signed_root(qx);
  const T ny = detail::signed_root(qy);

  if (features.has(Feature::n1)) {
    out.push_back(nx);
    out.push_back(ny);
  }
  if (features.has(Feature::n12)) {
    std::vector<T> d;
    d.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d.push_back(x[i] - y[i]);
    const std::span<const T> ds(d);
    out.push_back(detail::signed_root(metric.inner(ds, ds)));
  }
  if (features.has(Feature::inner)) out.push_back(xy);

  const bool need_outer =
      features.has(Feature::outer) || features.has(Feature::sin);
  std::optional<T> outer;
  if (need_outer && metric.kind() == MetricKind::euclidean) {
    // Lagrange identity: sum of squared 2x2 minors. No cancellation between
    // |x|^2 |y|^2 and <x,y>^2, so nearly parallel pairs keep their digits.
    std::vector<T> minors;
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = i + 1; j < x.size(); ++j) minors.push_back(x[i] * y[j] - x[j] * y[i]);
    }
    if (minors.empty()) {
      outer = detail::constant_like(xy, 0.0);
    } else if constexpr (std::is_same_v<T, ad::Var>) {
      outer = sqrt(ad::dot(minors, minors));
    } else {
      T acc = minors[0] * minors[0];
      for (std::size_t i = 1; i < minors.size(); ++i) acc = acc + minors[i] * minors[i];
      outer = sqrt(acc);
    }
  } else if (need_outer) {
    // |q| equals the squared signed norm exactly, so identical operands give 0.
    const T ax = detail::abs_of(qx);
    const T ay = detail::abs_of(qy);
    outer = sqrt(max0(ax * ay - xy * xy));
  }
  if (features.has(Feature::outer)) out.push_back(*outer);

  if (features.has(Feature::cos) || features.has(Feature::sin)) {
    const bool zero = value_of(nx) == 0.0 || value_of(ny) == 0.0;
    if (zero) degenerate = true;
    if (features.has(Feature::cos)) {
      out.push_back(zero ? detail::constant_like(xy, 0.0) : xy / (nx * ny));
    }
    if (features.has(Feature::sin)) {
      out.push_back(zero ? detail::constant_like(xy, 0.0) : *outer / (nx * ny));
    }
  }
}

/// Column-mean removal with sorted accumulation.
template <class T>
std::vector<T> center_rows(std::span<const T> coords, Eigen::Index m, Eigen::Index n) {
  using ad::value_of;
  std::vector<T> out(coords.begin(), coords.end());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index c = 0; c < n; ++c) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return value_of(coords[a * n + c]) < value_of(coords[b * n + c]);
    });
    T sum = coords[order[0] * n + c];
    for (Eigen::Index k = 1; k < m; ++k) sum = sum + coords[order[k] * n + c];
    const T mean = sum / static_cast<double>(m);
    for (Eigen::Index r = 0; r < m; ++r) out[r * n + c] = coords[r * n + c] - mean;
  }
  return out;
}

/// Generic featurization over row-major coordinates. `types` may be empty.
template <class T>
Features<T> featurize_rows(std::span<const T> coords, Eigen::Index m, Eigen::Index n,
                           std::span<const int> types, const FeatureConfig& config,
                           const Metric& metric) {
  config.validate(m, n);
  metric.check_dimension(n);
  if (config.include_types && static_cast<Eigen::Index>(types.size()) != m) {
    throw DimensionError("featurize: include_types needs one type label per point");
  }

  std::vector<T> centered;
  std::span<const T> x = coords;
  if (config.center) {
    centered = center_rows(coords, m, n);
    x = centered;
  }

  Features<T> result;
  result.values.reserve(static_cast<std::size_t>(config.output_length(m, n)));
  const Eigen::Index partners = config.linear ? n : m;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto xi = x.subspan(static_cast<std::size_t>(i * n), static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < partners; ++j) {
      const auto yj = x.subspan(static_cast<std::size_t>(j * n), static_cast<std::size_t>(n));
      append_pair_features<T>(xi, yj, metric, config.features, result.values, result.degenerate);
      if (config.node_index) {
        result.values.push_back(detail::constant_like(x[0], static_cast<double>(i)));
      }
      if (config.include_types) {
        result.values.push_back(detail::constant_like(x[0], static_cast<double>(types[i])));
        result.values.push_back(detail::constant_like(x[0], static_cast<double>(types[j])));
      }
    }
  }
  return result;
}

}  // namespace gksn
