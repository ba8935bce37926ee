#pragma once

// Template bodies for network.hpp. Not meant to be included directly.

#include <algorithm>
#include <type_traits>

namespace gksn::detail {

template <class T>
inline constexpr bool is_var_v = std::is_same_v<T, ad::Var>;

// Activation type: a tape variable if either side is one.
template <class T, class P>
using Act = std::conditional_t<is_var_v<T> || is_var_v<P>, ad::Var, double>;

template <class A>
A lift(const A& like, double v) {
  return constant_like(like, v);
}

template <class A, class P>
A lift_param(ad::Tape* tape, const P& p) {
  if constexpr (is_var_v<A> && !is_var_v<P>) {
    return tape->constant(p);
  } else {
    return p;
  }
}

template <class T>
ad::Tape* tape_of(std::span<const T> xs) {
  if constexpr (is_var_v<T>) {
    return xs.empty() ? nullptr : xs.front().tape;
  } else {
    return nullptr;
  }
}

// sum_i x_i * c(i) over a strided coefficient column.
template <class A, class P>
A weighted_sum(std::span<const A> x, std::span<const P> params, std::size_t offset,
               std::size_t stride, ad::Tape* tape) {
  if constexpr (is_var_v<A>) {
    std::vector<ad::Var> coeffs;
    coeffs.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      coeffs.push_back(lift_param<ad::Var>(tape, params[offset + i * stride]));
    }
    return ad::dot(x, coeffs);
  } else {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * params[offset + i * stride];
    return acc;
  }
}

// [x, relu(x - t_1), ..., relu(x - t_B)] for each x, concatenated.
template <class A>
std::vector<A> basis_expand(std::span<const A> xs, const std::vector<double>& knots) {
  using ad::relu;
  std::vector<A> out;
  out.reserve(xs.size() * (knots.size() + 1));
  for (const A& x : xs) {
    out.push_back(x);
    for (double t : knots) out.push_back(relu(x - t));
  }
  return out;
}

template <class A, class P>
std::vector<A> gksn_layer_generic(const GksnBlock& blk, const std::vector<double>& knots,
                                  std::span<const P> params, std::span<const A> z,
                                  ad::Tape* tape) {
  using ad::relu;
  const std::vector<A> hz = basis_expand<A>(z, knots);
  std::vector<A> s;
  s.reserve(static_cast<std::size_t>(blk.hidden));
  for (int k = 0; k < blk.hidden; ++k) {
    s.push_back(weighted_sum<A, P>(hz, params, blk.phi + std::size_t(k), std::size_t(blk.hidden),
                                   tape));
  }
  const std::vector<A> hs = basis_expand<A>(s, knots);
  std::vector<A> r;
  r.reserve(static_cast<std::size_t>(blk.out));
  for (int kp = 0; kp < blk.out; ++kp) {
    r.push_back(relu(weighted_sum<A, P>(z, params, blk.w_phi + std::size_t(kp),
                                        std::size_t(blk.out), tape)));
  }
  std::vector<A> out;
  out.reserve(static_cast<std::size_t>(blk.out));
  for (int i = 0; i < blk.out; ++i) {
    A kst = weighted_sum<A, P>(hs, params, blk.psi + std::size_t(i), std::size_t(blk.out), tape);
    A res = weighted_sum<A, P>(r, params, blk.w_psi + std::size_t(i) * std::size_t(blk.out), 1,
                               tape);
    out.push_back(kst + res);
  }
  return out;
}

template <class A, class P>
std::vector<A> dense_layer_generic(const DenseBlock& blk, std::span<const P> params,
                                   std::span<const A> z, ad::Tape* tape) {
  using ad::relu;
  std::vector<A> out;
  out.reserve(static_cast<std::size_t>(blk.out));
  for (int o = 0; o < blk.out; ++o) {
    A v = weighted_sum<A, P>(z, params, blk.weight + std::size_t(o), std::size_t(blk.out), tape) +
          lift_param<A>(tape, params[blk.bias + std::size_t(o)]);
    out.push_back(blk.activation ? relu(v) : v);
  }
  return out;
}

template <class A, class P>
A head_generic(const Model& model, std::span<const P> params, std::span<const A> input,
               ad::Tape* tape) {
  std::vector<A> z(input.begin(), input.end());
  if (model.kind() == ModelKind::kan) {
    for (const GksnBlock& blk : model.gksn_layers()) {
      z = gksn_layer_generic<A, P>(blk, model.knots(), params, z, tape);
    }
  } else {
    for (const DenseBlock& blk : model.dense_layers()) {
      z = dense_layer_generic<A, P>(blk, params, z, tape);
    }
  }
  return z.at(0);
}

// Per-pair scalars of a (possibly canonically reordered) frame.
template <class T>
Features<T> pair_scalars(const FeatureConfig& config, const Metric& metric, Eigen::Index m,
                         Eigen::Index n, bool canonical, std::span<const T> coords,
                         std::span<const int> types) {
  using ad::value_of;
  FeatureConfig cfg = config;
  if (!canonical || !cfg.linear) {
    return featurize_rows<T>(coords, m, n, types, cfg, metric);
  }
  // Pooled models with basis-subset pairs pick the basis from a canonical
  // row order so the pooled value does not depend on the input order.
  std::vector<T> x = cfg.center ? center_rows<T>(coords, m, n)
                                : std::vector<T>(coords.begin(), coords.end());
  Eigen::MatrixXd vals(m, n);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < n; ++c) vals(r, c) = value_of(x[r * n + c]);
  const auto order = canonical_row_order(vals, metric);
  std::vector<T> sorted;
  sorted.reserve(x.size());
  std::vector<int> sorted_types;
  for (Eigen::Index r : order) {
    for (Eigen::Index c = 0; c < n; ++c) sorted.push_back(x[r * n + c]);
    if (!types.empty()) sorted_types.push_back(types[r]);
  }
  cfg.center = false;
  return featurize_rows<T>(std::span<const T>(sorted), m, n, sorted_types, cfg, metric);
}

// Sum of pair contributions in ascending value order.
template <class A>
A sorted_sum(std::vector<A>& terms) {
  using ad::value_of;
  std::stable_sort(terms.begin(), terms.end(),
                   [](const A& a, const A& b) { return value_of(a) < value_of(b); });
  A acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
  return acc;
}

}  // namespace gksn::detail

namespace gksn {

template <class T, class P>
std::vector<T> head_input_generic(const Model& model, std::span<const P> params,
                                  std::span<const T> coords, std::span<const int> types,
                                  bool& degenerate) {
  static_assert(std::is_same_v<T, detail::Act<T, P>>,
                "coordinates must be tape variables whenever parameters are");
  using A = T;
  ad::Tape* tape = detail::tape_of(coords);

  Features<A> feats =
      detail::pair_scalars<A>(model.feature_config(), model.metric(), model.frame_m(),
                              model.frame_n(), model.perm(), coords, types);
  degenerate = degenerate || feats.degenerate;
  const Standardizer& norm = model.input_norm();
  const std::size_t width = norm.size();
  if (!model.perm() && feats.values.size() != width) {
    throw DimensionError("model expects " + std::to_string(width) + " features, frame gives " +
                         std::to_string(feats.values.size()));
  }

  auto standardize = [&](std::size_t idx, std::size_t dim) -> A {
    return (feats.values[idx] - norm.mean[dim]) * norm.inv_std[dim];
  };

  std::vector<A> input;
  if (!model.perm()) {
    input.reserve(feats.values.size());
    for (std::size_t i = 0; i < feats.values.size(); ++i) input.push_back(standardize(i, i));
    return input;
  }
  const PoolBlock& pool = *model.pool();
  const std::size_t w_count = static_cast<std::size_t>(pool.pair_width);
  const std::size_t pairs = feats.values.size() / w_count;
  std::vector<A> scaled;
  scaled.reserve(feats.values.size());
  for (std::size_t i = 0; i < feats.values.size(); ++i) scaled.push_back(standardize(i, i % width));
  const std::vector<A> basis = detail::basis_expand<A>(std::span<const A>(scaled), model.knots());
  const std::size_t row = w_count * (model.knots().size() + 1);
  const double inv_pairs = 1.0 / static_cast<double>(pairs);
  input.reserve(static_cast<std::size_t>(pool.entries));
  for (int q = 0; q < pool.entries; ++q) {
    std::vector<A> terms;
    terms.reserve(pairs);
    for (std::size_t p = 0; p < pairs; ++p) {
      const std::span<const A> hp(basis.data() + p * row, row);
      terms.push_back(detail::weighted_sum<A, P>(hp, params, pool.bank + std::size_t(q),
                                                 std::size_t(pool.entries), tape));
    }
    input.push_back(detail::sorted_sum(terms) * inv_pairs);
  }
  return input;
}

template <class T, class P>
T energy_generic(const Model& model, std::span<const P> params, std::span<const T> coords,
                 std::span<const int> types, bool& degenerate) {
  const std::vector<T> input = head_input_generic<T, P>(model, params, coords, types, degenerate);
  return detail::head_generic<T, P>(model, params, std::span<const T>(input),
                                    detail::tape_of(coords));
}

}  // namespace gksn
