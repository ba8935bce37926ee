#include "gksn/invariants.hpp"

#include <sstream>

namespace gksn {

void Frame::validate() const {
  if (coords.rows() < 1 || coords.cols() < 1) {
    throw DimensionError("frame needs m >= 1 points and n >= 1 dimensions");
  }
  if (!coords.allFinite()) throw DimensionError("frame coordinates must be finite");
  if (!types.empty() && static_cast<Eigen::Index>(types.size()) != coords.rows()) {
    throw DimensionError("frame types length " + std::to_string(types.size()) +
                         " does not match m = " + std::to_string(coords.rows()));
  }
}

Metric Metric::bilinear(Eigen::MatrixXd a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw DimensionError("bilinear metric needs a non-empty square matrix");
  }
  if (!a.allFinite() || (a - a.transpose()).cwiseAbs().maxCoeff() != 0.0) {
    throw DimensionError("bilinear metric matrix must be finite and symmetric");
  }
  Metric m;
  m.kind_ = MetricKind::bilinear;
  m.matrix_ = std::move(a);
  return m;
}

Eigen::MatrixXd Metric::form(Eigen::Index n) const {
  check_dimension(n);
  switch (kind_) {
    case MetricKind::euclidean:
      return Eigen::MatrixXd::Identity(n, n);
    case MetricKind::minkowski: {
      Eigen::MatrixXd eta = -Eigen::MatrixXd::Identity(n, n);
      eta(0, 0) = 1.0;
      return eta;
    }
    case MetricKind::bilinear:
      return matrix_;
  }
  return {};
}

void Metric::check_dimension(Eigen::Index n) const {
  if (n < 1) throw DimensionError("metric needs n >= 1");
  if (kind_ == MetricKind::bilinear && matrix_.rows() != n) {
    throw DimensionError("bilinear metric is " + std::to_string(matrix_.rows()) + "x" +
                         std::to_string(matrix_.cols()) + " but points have n = " +
                         std::to_string(n));
  }
}

std::string Metric::name() const {
  switch (kind_) {
    case MetricKind::euclidean: return "euclidean";
    case MetricKind::minkowski: return "minkowski";
    case MetricKind::bilinear: return "bilinear";
  }
  return "?";
}

Metric Metric::parse(const std::string& name) {
  if (name == "euclidean") return euclidean();
  if (name == "minkowski") return minkowski();
  throw Error("unknown metric '" + name + "' (expected euclidean or minkowski)");
}

const char* feature_name(Feature f) {
  switch (f) {
    case Feature::n1: return "n1";
    case Feature::n12: return "n12";
    case Feature::inner: return "inner";
    case Feature::outer: return "outer";
    case Feature::cos: return "cos";
    case Feature::sin: return "sin";
  }
  return "?";
}

int FeatureSet::width() const {
  int w = 0;
  for (Feature f : kAllFeatures) {
    if (has(f)) w += (f == Feature::n1) ? 2 : 1;
  }
  return w;
}

std::string FeatureSet::to_string() const {
  std::string out;
  for (Feature f : kAllFeatures) {
    if (!has(f)) continue;
    if (!out.empty()) out += ',';
    out += feature_name(f);
  }
  return out;
}

FeatureSet FeatureSet::parse(const std::string& list) {
  FeatureSet fs;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "all") {
      for (Feature f : kAllFeatures) fs.bits_ |= bit(f);
      continue;
    }
    bool found = false;
    for (Feature f : kAllFeatures) {
      if (item == feature_name(f)) {
        fs.bits_ |= bit(f);
        found = true;
      }
    }
    if (!found) throw Error("unknown feature '" + item + "'");
  }
  if (fs.empty()) throw Error("feature list is empty");
  return fs;
}

int FeatureConfig::pair_width() const {
  return features.width() + (node_index ? 1 : 0) + (include_types ? 2 : 0);
}

int FeatureConfig::pair_count(Eigen::Index m, Eigen::Index n) const {
  return static_cast<int>(m * (linear ? n : m));
}

void FeatureConfig::validate(Eigen::Index m, Eigen::Index n) const {
  if (features.empty()) throw DimensionError("feature set is empty");
  if (m < 1 || n < 1) throw DimensionError("frame must have m >= 1 and n >= 1");
  if (linear && m < n) {
    throw DimensionError("linear features need m >= n (m = " + std::to_string(m) +
                         ", n = " + std::to_string(n) + ")");
  }
}

std::string FeatureConfig::flag_string() const {
  std::string s = "(";
  s += node_index ? 'T' : 'F';
  s += ',';
  s += linear ? 'T' : 'F';
  s += ')';
  return s;
}

namespace {
std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  }
  return out;
}
}  // namespace

Frame center(const Frame& frame) {
  frame.validate();
  const auto flat = row_major(frame.coords);
  const auto centered = center_rows<double>(flat, frame.m(), frame.n());
  Frame out = frame;
  for (Eigen::Index r = 0; r < frame.m(); ++r) {
    for (Eigen::Index c = 0; c < frame.n(); ++c) out.coords(r, c) = centered[r * frame.n() + c];
  }
  return out;
}

Eigen::MatrixXd gram(const Eigen::MatrixXd& coords, const Metric& metric) {
  metric.check_dimension(coords.cols());
  const Eigen::MatrixXd l = metric.form(coords.cols());
  const Eigen::MatrixXd xl = coords * l;
  const Eigen::Index m = coords.rows();
  Eigen::MatrixXd g(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i; j < m; ++j) {
      g(i, j) = xl.row(i).dot(coords.row(j));
      g(j, i) = g(i, j);
    }
  }
  return g;
}

Eigen::MatrixXd gram(const Frame& frame, const Metric& metric) {
  return gram(frame.coords, metric);
}

Eigen::MatrixXd basis_subset(const Frame& frame, Eigen::Index n) {
  if (frame.m() < n) {
    throw DimensionError("basis_subset: m = " + std::to_string(frame.m()) + " < n = " +
                         std::to_string(n));
  }
  return frame.coords.topRows(n);
}

Features<double> pair_features(std::span<const double> x, std::span<const double> y,
                               const Metric& metric, FeatureSet features) {
  if (x.size() != y.size() || x.empty()) throw DimensionError("pair_features: length mismatch");
  metric.check_dimension(static_cast<Eigen::Index>(x.size()));
  Features<double> out;
  append_pair_features<double>(x, y, metric, features, out.values, out.degenerate);
  return out;
}

Features<double> featurize(const Frame& frame, const FeatureConfig& config, const Metric& metric) {
  frame.validate();
  const auto flat = row_major(frame.coords);
  return featurize_rows<double>(flat, frame.m(), frame.n(), frame.types, config, metric);
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& a, double rel_tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? rel_tol * s(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Eigen::MatrixXd reconstruct_gram(const Eigen::MatrixXd& xyt, const Eigen::MatrixXd& yyt) {
  if (yyt.rows() != yyt.cols() || xyt.cols() != yyt.rows()) {
    throw DimensionError("reconstruct_gram: XY^T is " + std::to_string(xyt.rows()) + "x" +
                         std::to_string(xyt.cols()) + ", YY^T is " +
                         std::to_string(yyt.rows()) + "x" + std::to_string(yyt.cols()));
  }
  if (!xyt.allFinite() || !yyt.allFinite()) throw Error("reconstruct_gram: non-finite input");
  return xyt * pseudo_inverse(yyt) * xyt.transpose();
}

std::vector<Eigen::Index> canonical_row_order(const Eigen::MatrixXd& coords, const Metric& metric) {
  const Eigen::Index m = coords.rows();
  const Eigen::MatrixXd g = gram(coords, metric);
  std::vector<double> key(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) key[i] = detail::signed_root(g(i, i));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (key[a] != key[b]) return key[a] > key[b];
    for (Eigen::Index c = 0; c < coords.cols(); ++c) {
      if (coords(a, c) != coords(b, c)) return coords(a, c) < coords(b, c);
    }
    return false;
  });
  return order;
}

}  // namespace gksn
