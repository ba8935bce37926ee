#include "gksn/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gksn/batch.hpp"
#include "gksn/datasets.hpp"

namespace gksn {

VerifyReport make_report(std::string check, double residual, double tolerance,
                         std::uint64_t seed, std::vector<long> dims) {
  VerifyReport r;
  r.check = std::move(check);
  r.residual = residual;
  r.tolerance = tolerance;
  r.pass = residual <= tolerance;  // NaN residuals fail
  r.seed = seed;
  r.dims = std::move(dims);
  return r;
}

std::string reports_to_json(const std::vector<VerifyReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const VerifyReport& r : reports) {
    nlohmann::json j = {{"check", r.check},
                        {"residual", r.residual},
                        {"tolerance", r.tolerance},
                        {"pass", r.pass},
                        {"expect_pass", r.expect_pass},
                        {"seed", r.seed},
                        {"dims", r.dims}};
    if (!std::isfinite(r.residual)) j["residual"] = std::to_string(r.residual);
    if (!r.detail.empty()) j["detail"] = r.detail;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

Eigen::MatrixXd random_normal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = dist(rng);
  return a;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, std::uint64_t seed) {
  const Eigen::MatrixXd a = random_normal(n, n, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  }
  return q;
}

Eigen::MatrixXd random_boost(Eigen::Index n, double rapidity, std::uint64_t seed) {
  if (n < 1) throw DimensionError("random_boost: n must be >= 1");
  if (std::abs(rapidity) > 2.0) throw Error("random_boost: |rapidity| must be <= 2");
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(n, n);
  if (n == 1) return out;
  const Eigen::Index s = n - 1;
  Eigen::VectorXd u = random_normal(s, 1, stream_seed(seed, 1, 0)).col(0);
  u /= u.norm();
  const double ch = std::cosh(rapidity);
  const double sh = std::sinh(rapidity);
  Eigen::MatrixXd boost = Eigen::MatrixXd::Identity(n, n);
  boost(0, 0) = ch;
  boost.block(0, 1, 1, s) = sh * u.transpose();
  boost.block(1, 0, s, 1) = sh * u;
  boost.block(1, 1, s, s) += (ch - 1.0) * u * u.transpose();
  Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(n, n);
  rot.block(1, 1, s, s) = random_orthogonal(s, stream_seed(seed, 2, 0));
  out = boost * rot;
  return out;
}

namespace {

double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  const double denom = ref.norm();
  const double diff = (a - ref).norm();
  if (denom == 0.0) return diff;
  return diff / denom;
}

Frame normal_frame(Eigen::Index m, Eigen::Index n, std::uint64_t seed) {
  Frame f;
  f.coords = random_normal(m, n, seed);
  return f;
}

Eigen::MatrixXd transform_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                               const Eigen::RowVectorXd& t) {
  Eigen::MatrixXd y = x * g.transpose();
  y.rowwise() += t;
  return y;
}

std::vector<std::vector<Eigen::Index>> all_permutations(Eigen::Index m) {
  std::vector<Eigen::Index> p(static_cast<std::size_t>(m));
  std::iota(p.begin(), p.end(), Eigen::Index(0));
  std::vector<std::vector<Eigen::Index>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

Frame permute_rows(const Frame& f, const std::vector<Eigen::Index>& p) {
  Frame g = f;
  for (std::size_t i = 0; i < p.size(); ++i) {
    g.coords.row(Eigen::Index(i)) = f.coords.row(p[i]);
    if (f.has_types()) g.types[i] = f.types[std::size_t(p[i])];
  }
  return g;
}

std::vector<Eigen::Index> random_permutation(Eigen::Index m, std::uint64_t seed) {
  std::vector<Eigen::Index> p;
  for (std::size_t i : seeded_permutation(std::size_t(m), seed)) p.push_back(Eigen::Index(i));
  return p;
}

}  // namespace

VerifyReport verify_lemma_a14(Eigen::Index m, Eigen::Index n, Eigen::Index k, std::uint64_t seed,
                              bool rank_deficient) {
  if (k < n) throw DimensionError("verify_lemma_a14: needs k >= n");
  const Eigen::MatrixXd x = random_normal(m, n, stream_seed(seed, 0x61, 0));
  Eigen::MatrixXd y = random_normal(k, n, stream_seed(seed, 0x61, 1));
  if (rank_deficient) {
    for (Eigen::Index r = 1; r < k; ++r) y.row(r) = y.row(0);
  }
  const Eigen::MatrixXd xyt = x * y.transpose();
  const Eigen::MatrixXd yyt = y * y.transpose();
  const Eigen::MatrixXd xxt = x * x.transpose();
  VerifyReport r = make_report(rank_deficient ? "lemma-a14-rank-deficient" : "lemma-a14",
                               rel_frobenius(reconstruct_gram(xyt, yyt), xxt), 1e-8, seed,
                               {long(m), long(n), long(k)});
  r.expect_pass = !rank_deficient;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(y);
  r.detail = "rank(Y)=" + std::to_string(lu.rank());
  return r;
}

VerifyReport verify_rotation_listing(Eigen::Index m, Eigen::Index n, std::uint64_t seed,
                                     bool identity) {
  if (m < n) throw DimensionError("verify_rotation_listing: needs m >= n");
  const Eigen::MatrixXd x = random_normal(m, n, stream_seed(seed, 0x72, 0));
  const Eigen::MatrixXd q =
      identity ? Eigen::MatrixXd::Identity(n, n) : random_orthogonal(n, stream_seed(seed, 0x72, 1));
  const Eigen::MatrixXd xr = x * q.transpose();

  auto parts = [&](const Eigen::MatrixXd& pts) {
    const Eigen::MatrixXd c = pts * pts.transpose();
    const Eigen::MatrixXd z = pts * pts.topRows(n).transpose();
    const Eigen::MatrixXd d = z * z.transpose();
    return std::array<Eigen::MatrixXd, 3>{c, d, z};
  };
  const auto before = parts(x);
  const auto after = parts(xr);
  const double rc = rel_frobenius(after[0], before[0]);
  const double rd = rel_frobenius(after[1], before[1]);
  const double rz = rel_frobenius(after[2], before[2]);
  VerifyReport r = make_report("rotation-listing", std::max({rc, rd, rz}), 1e-8, seed,
                               {long(m), long(n)});
  char buf[160];
  std::snprintf(buf, sizeof buf, "C=%.3g D=%.3g Z=%.3g", rc, rd, rz);
  r.detail = buf;
  return r;
}

VerifyReport verify_feature_invariance(const FeatureConfig& config, Eigen::Index m, Eigen::Index n,
                                       int trials, std::uint64_t seed) {
  FeatureConfig cfg = config;
  cfg.center = true;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Frame f = normal_frame(m, n, stream_seed(seed, 0x66, std::uint64_t(t)));
    const Eigen::MatrixXd q = random_orthogonal(n, stream_seed(seed, 0x67, std::uint64_t(t)));
    const Eigen::RowVectorXd shift = 3.0 * random_normal(1, n, stream_seed(seed, 0x68, std::uint64_t(t)));
    Frame g = f;
    g.coords = transform_rows(f.coords, q, shift);
    const auto a = featurize(f, cfg, Metric::euclidean()).values;
    const auto b = featurize(g, cfg, Metric::euclidean()).values;
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff = std::max(diff, std::abs(a[i] - b[i]));
      scale = std::max(scale, std::abs(a[i]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-300));
  }
  VerifyReport r = make_report("feature-invariance", worst, 1e-8, seed, {long(m), long(n)});
  r.detail = "flags=" + cfg.flag_string() + " features=" + cfg.features.to_string();
  return r;
}

VerifyReport verify_lorentz_gram(Eigen::Index m, Eigen::Index n, int trials, std::uint64_t seed) {
  const Metric mk = Metric::minkowski();
  double worst = 0.0;
  std::mt19937_64 rng(stream_seed(seed, 0x6c, 0));
  std::uniform_real_distribution<double> rap(-2.0, 2.0);
  for (int t = 0; t < trials; ++t) {
    const Eigen::MatrixXd x = random_normal(m, n, stream_seed(seed, 0x6d, std::uint64_t(t)));
    const Eigen::MatrixXd b = random_boost(n, rap(rng), stream_seed(seed, 0x6e, std::uint64_t(t)));
    worst = std::max(worst, rel_frobenius(gram(Eigen::MatrixXd(x * b.transpose()), mk), gram(x, mk)));
  }
  return make_report("lorentz-gram", worst, 1e-6, seed, {long(m), long(n)});
}

namespace {

VerifyReport invariance_over(const EnergyFn& energy, const std::function<Frame(std::uint64_t)>& frame_at,
                             Eigen::Index m, Eigen::Index n, SymmetryGroup group, int trials,
                             std::uint64_t seed, bool exact_perm) {
  double worst = 0.0;
  std::mt19937_64 rng(stream_seed(seed, 0x69, 0));
  std::uniform_real_distribution<double> rap(-2.0, 2.0);
  std::string name;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t ts = std::uint64_t(t);
    const Frame f = frame_at(ts);
    const double e0 = energy(f);
    auto record = [&](const Frame& g) {
      worst = std::max(worst, std::abs(energy(g) - e0) / (1.0 + std::abs(e0)));
    };
    const Eigen::RowVectorXd shift = random_normal(1, n, stream_seed(seed, 0x6b, ts));
    switch (group) {
      case SymmetryGroup::orthogonal: {
        name = "invariance-orthogonal";
        Frame g = f;
        g.coords = transform_rows(f.coords, random_orthogonal(n, stream_seed(seed, 0x70, ts)), shift);
        record(g);
        break;
      }
      case SymmetryGroup::lorentz: {
        name = "invariance-lorentz";
        Frame g = f;
        g.coords = transform_rows(f.coords, random_boost(n, rap(rng), stream_seed(seed, 0x71, ts)),
                                  shift);
        record(g);
        break;
      }
      case SymmetryGroup::permutation: {
        name = "invariance-permutation";
        if (m <= 6) {
          for (const auto& p : all_permutations(m)) record(permute_rows(f, p));
        } else {
          record(permute_rows(f, random_permutation(m, stream_seed(seed, 0x73, ts))));
        }
        break;
      }
    }
  }
  const double tol = (group == SymmetryGroup::permutation && exact_perm) ? 0.0 : 1e-6;
  return make_report(name, worst, tol, seed, {long(m), long(n)});
}

}  // namespace

VerifyReport verify_invariance(const EnergyFn& energy, Eigen::Index m, Eigen::Index n,
                               SymmetryGroup group, int trials, std::uint64_t seed,
                               bool exact_perm) {
  return invariance_over(
      energy, [&](std::uint64_t t) { return normal_frame(m, n, stream_seed(seed, 0x6a, t)); }, m, n,
      group, trials, seed, exact_perm);
}

VerifyReport verify_frames_invariance(const Model& model, std::span<const Frame> frames,
                                      SymmetryGroup group, std::uint64_t seed) {
  const bool exact = group == SymmetryGroup::permutation && model.perm();
  VerifyReport r = invariance_over([&](const Frame& f) { return model_energy(model, f); },
                                   [&](std::uint64_t t) { return frames[std::size_t(t)]; },
                                   model.frame_m(), model.frame_n(), group, int(frames.size()),
                                   seed, exact);
  r.detail = std::to_string(frames.size()) + " given frames";
  return r;
}

VerifyReport verify_model_invariance(const Model& model, SymmetryGroup group, int trials,
                                     std::uint64_t seed) {
  const bool exact = group == SymmetryGroup::permutation && model.perm();
  VerifyReport r = verify_invariance([&](const Frame& f) { return model_energy(model, f); },
                                     model.frame_m(), model.frame_n(), group, trials, seed, exact);
  r.detail = to_string(model.kind()) + (model.perm() ? " perm " : " ") +
             model.feature_config().flag_string() + " " + model.metric().name();
  return r;
}

VerifyReport verify_force_equivariance(const Model& model, int trials, std::uint64_t seed) {
  const Eigen::Index m = model.frame_m(), n = model.frame_n();
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t ts = std::uint64_t(t);
    const Frame f = normal_frame(m, n, stream_seed(seed, 0x65, ts));
    const Eigen::MatrixXd q = random_orthogonal(n, stream_seed(seed, 0x64, ts));
    Frame g = f;
    g.coords = f.coords * q.transpose();
    const Eigen::MatrixXd fx = forces(model, f) * q.transpose();
    const Eigen::MatrixXd fg = forces(model, g);
    const double scale = std::max(fx.cwiseAbs().maxCoeff(), fg.cwiseAbs().maxCoeff());
    const double diff = (fx - fg).cwiseAbs().maxCoeff();
    worst = std::max(worst, scale == 0.0 ? diff : diff / scale);
  }
  return make_report("force-equivariance", worst, 1e-5, seed, {long(m), long(n)});
}

VerifyReport verify_force_fd(const Model& model, std::uint64_t seed) {
  const Eigen::Index m = model.frame_m(), n = model.frame_n();
  const std::vector<int> types;
  const ad::TapeFunction fn = [&](ad::Tape&, std::span<const ad::Var> x) {
    bool degenerate = false;
    return energy_generic<ad::Var, double>(model, model.params(), x, types, degenerate);
  };
  ad::GradCheck best{1e300, 0.0};
  for (int attempt = 0; attempt < 50; ++attempt) {
    const Frame f = normal_frame(m, n, stream_seed(seed, 0x46, std::uint64_t(attempt)));
    std::vector<double> point(f.coords.size());
    for (Eigen::Index r = 0; r < m; ++r)
      for (Eigen::Index c = 0; c < n; ++c) point[std::size_t(r * n + c)] = f.coords(r, c);
    const ad::GradCheck gc = ad::grad_check(fn, point, 1e-5);
    best = gc;
    if (gc.kink_margin >= 1e-3) break;
  }
  VerifyReport r = make_report("force-fd", best.max_rel_error, 1e-4, seed, {long(m), long(n)});
  r.detail = "kink_margin=" + std::to_string(best.kink_margin);
  return r;
}

VerifyReport verify_frames_force_fd(const Model& model, std::span<const Frame> frames,
                                   std::uint64_t seed) {
  const Eigen::Index m = model.frame_m(), n = model.frame_n();
  double worst = 0.0;
  std::size_t checked = 0;
  for (const Frame& f : frames) {
    const ad::TapeFunction fn = [&](ad::Tape&, std::span<const ad::Var> x) {
      bool degenerate = false;
      return energy_generic<ad::Var, double>(model, model.params(), x, f.types, degenerate);
    };
    std::vector<double> point(f.coords.size());
    for (Eigen::Index r = 0; r < m; ++r)
      for (Eigen::Index c = 0; c < n; ++c) point[std::size_t(r * n + c)] = f.coords(r, c);
    const ad::GradCheck gc = ad::grad_check(fn, point, 1e-5);
    if (gc.kink_margin < 1e-3) continue;
    worst = std::max(worst, gc.max_rel_error);
    ++checked;
  }
  // Nothing checked is a failure, not a pass.
  VerifyReport r = make_report("force-fd", checked == 0 ? 1.0 : worst, 1e-4, seed, {long(m), long(n)});
  r.detail = std::to_string(checked) + " of " + std::to_string(frames.size()) + " frames away from kinks";
  return r;
}

VerifyReport verify_gradient(const Model& model, std::uint64_t seed, std::size_t max_coords) {
  const Eigen::Index m = model.frame_m(), n = model.frame_n();
  const std::size_t count = model.param_count();
  std::vector<double> analytic(count);
  Frame frame;
  double margin = 0.0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    frame = normal_frame(m, n, stream_seed(seed, 0x47, std::uint64_t(attempt)));
    ad::Tape tape;
    std::vector<ad::Var> ps, xs;
    ps.reserve(count);
    for (double p : model.params()) ps.push_back(tape.variable(p));
    for (Eigen::Index r = 0; r < m; ++r)
      for (Eigen::Index c = 0; c < n; ++c) xs.push_back(tape.constant(frame.coords(r, c)));
    bool degenerate = false;
    const ad::Var e = energy_generic<ad::Var, ad::Var>(
        model, std::span<const ad::Var>(ps), std::span<const ad::Var>(xs), frame.types, degenerate);
    margin = tape.kink_margin();
    const ad::Gradients g = tape.backward(e);
    for (std::size_t i = 0; i < count; ++i) analytic[i] = g[ps[i]];
    if (margin >= 1e-3) break;
  }

  std::vector<double> coords(std::size_t(m * n));
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < n; ++c) coords[std::size_t(r * n + c)] = frame.coords(r, c);
  std::vector<double> params(model.params().begin(), model.params().end());
  auto eval = [&] {
    bool degenerate = false;
    return energy_generic<double, double>(model, std::span<const double>(params),
                                          std::span<const double>(coords), frame.types, degenerate);
  };

  std::vector<std::size_t> which(count);
  std::iota(which.begin(), which.end(), std::size_t(0));
  if (max_coords > 0 && max_coords < count) {
    std::mt19937_64 rng(stream_seed(seed, 0x48, 0));
    std::shuffle(which.begin(), which.end(), rng);
    which.resize(max_coords);
  }
  const double h = 1e-5;
  const double floor = ad::relative_error_floor(analytic);
  double worst = 0.0;
  for (std::size_t i : which) {
    const double orig = params[i];
    params[i] = orig + h;
    const double up = eval();
    params[i] = orig - h;
    const double down = eval();
    params[i] = orig;
    const double central = (up - down) / (2.0 * h);
    worst = std::max(worst, ad::fd_relative_error(analytic[i], central, floor));
  }
  VerifyReport r = make_report("gradient-fd", worst, 1e-4, seed,
                               {long(m), long(n), long(count)});
  r.detail = "kink_margin=" + std::to_string(margin) + " checked=" + std::to_string(which.size());
  return r;
}

VerifyReport verify_batch_gradient(const Model& model, std::uint64_t seed) {
  const Eigen::Index m = model.frame_m(), n = model.frame_n();
  std::vector<Frame> frames;
  for (int i = 0; i < 6; ++i) {
    Frame f = normal_frame(m, n, stream_seed(seed, 0x42, std::uint64_t(i)));
    frames.push_back(std::move(f));
  }
  const RowMatrix inputs = prepare_inputs(model, frames);
  const Eigen::VectorXd pred = predict(model, inputs);
  // Targets straddle the Huber threshold so both branches are exercised.
  Eigen::VectorXd targets(Eigen::Index(frames.size()));
  for (Eigen::Index i = 0; i < targets.size(); ++i) targets(i) = pred(i) + (i % 2 ? 0.3 : -2.5);
  std::vector<Eigen::Index> rows(frames.size());
  std::iota(rows.begin(), rows.end(), Eigen::Index(0));
  std::vector<double> batched(model.param_count());
  const double loss = loss_and_gradient(model, inputs, targets, rows, 1.0, batched);

  std::vector<double> tape_grad(model.param_count(), 0.0), g(model.param_count());
  double tape_loss = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const double e = energy_param_gradient(model, frames[i], g);
    const double d = e - targets(Eigen::Index(i));
    const double dl = std::abs(d) <= 1.0 ? d : (d > 0 ? 1.0 : -1.0);
    tape_loss += std::abs(d) <= 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
    for (std::size_t p = 0; p < g.size(); ++p) tape_grad[p] += dl * g[p];
  }
  const double inv = 1.0 / double(frames.size());
  tape_loss *= inv;
  double worst = std::abs(loss - tape_loss) / (std::abs(tape_loss) + 1e-12);
  double scale = 0.0;
  for (double v : tape_grad) scale = std::max(scale, std::abs(v) * inv);
  for (std::size_t p = 0; p < g.size(); ++p) {
    worst = std::max(worst, std::abs(batched[p] - tape_grad[p] * inv) / (scale + 1e-300));
  }
  VerifyReport r = make_report("batch-gradient", worst, 1e-9, seed,
                               {long(m), long(n), long(model.param_count())});
  r.detail = to_string(model.kind()) + (model.perm() ? " perm" : "");
  return r;
}

Model random_model(ModelKind kind, bool perm, const FeatureConfig& config, const Metric& metric,
                   Eigen::Index m, Eigen::Index n, std::uint64_t seed, std::vector<int> hidden,
                   int basis) {
  ModelSpec spec = ModelSpec::defaults(kind, perm);
  if (!hidden.empty()) spec.hidden = std::move(hidden);
  if (basis > 0) spec.basis = basis;
  Model model = Model::build(spec, config, metric, m, n);
  model.init_params(stream_seed(seed, 0x69, 0));
  std::vector<Frame> frames;
  for (int i = 0; i < 32; ++i) {
    frames.push_back(normal_frame(m, n, stream_seed(seed, 0x6e, std::uint64_t(i))));
    if (config.include_types) frames.back().types.assign(std::size_t(m), 0);
  }
  model.set_input_norm(fit_standardizer(model, frames));
  return model;
}

namespace {

VerifyReport with_detail(VerifyReport r, const std::string& extra) {
  r.detail = r.detail.empty() ? extra : r.detail + " " + extra;
  return r;
}

}  // namespace

std::vector<VerifyReport> run_negative_controls(int seeds, std::uint64_t base_seed) {
  std::vector<VerifyReport> out;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + std::uint64_t(s);
    std::mt19937_64 rng(stream_seed(seed, 0x4e, 0));
    const Eigen::Index n = 2 + Eigen::Index(rng() % 5);
    const Eigen::Index m = n + Eigen::Index(rng() % 10);
    const Eigen::Index k = n + Eigen::Index(rng() % 4);
    out.push_back(verify_lemma_a14(m, n, k, seed, true));

    // Symmetry-breaking featurization: the model energy plus a raw coordinate.
    FeatureConfig cfg;
    const Model model = random_model(ModelKind::kan, false, cfg, Metric::euclidean(), 4, 3, seed,
                                     {8});
    VerifyReport r = verify_invariance(
        [&](const Frame& f) { return model_energy(model, f) + f.coords(0, 0); }, 4, 3,
        SymmetryGroup::orthogonal, 5, seed);
    r.check = "invariance-broken-features";
    r.expect_pass = false;
    out.push_back(r);
  }
  return out;
}

std::vector<VerifyReport> run_suite(const SuiteOptions& opt) {
  std::vector<VerifyReport> out;
  // The dimensions of the published listings.
  out.push_back(with_detail(verify_lemma_a14(15, 3, 5, opt.base_seed), "listing dims"));
  out.push_back(with_detail(verify_rotation_listing(5, 3, opt.base_seed), "listing dims"));

  for (int s = 0; s < opt.seeds; ++s) {
    const std::uint64_t seed = opt.base_seed + std::uint64_t(s);
    std::mt19937_64 rng(stream_seed(seed, 0x53, 0));
    const Eigen::Index n = 1 + Eigen::Index(rng() % 6);
    const Eigen::Index m = n + Eigen::Index(rng() % std::uint64_t(21 - n));
    const Eigen::Index k = n + Eigen::Index(rng() % 5);
    out.push_back(verify_lemma_a14(m, n, k, seed));
    out.push_back(verify_rotation_listing(m, n, seed));

    FeatureConfig cfg;
    cfg.node_index = (s % 2) == 1;
    cfg.linear = (s % 4) < 2;
    cfg.features = FeatureSet{Feature::n1, Feature::n12, Feature::inner, Feature::outer};
    const Eigen::Index fm = std::max<Eigen::Index>(m, 2);
    out.push_back(verify_feature_invariance(cfg, fm, n, 3, seed));
    out.push_back(verify_lorentz_gram(m, std::max<Eigen::Index>(n, 2), 3, seed));

    // Model-level checks on small frames.
    const Eigen::Index mm = 4, mn = 3;
    const ModelKind kind = (s % 2) == 0 ? ModelKind::kan : ModelKind::mlp;
    FeatureConfig mcfg;
    mcfg.linear = (s % 3) != 0;
    const std::vector<int> small = {8, 8};
    const Model plain = random_model(kind, false, mcfg, Metric::euclidean(), mm, mn, seed, small);
    out.push_back(verify_model_invariance(plain, SymmetryGroup::orthogonal, 3, seed));
    const Model lorentz = random_model(kind, false, mcfg, Metric::minkowski(), mm, mn, seed, small);
    out.push_back(verify_model_invariance(lorentz, SymmetryGroup::lorentz, 3, seed));
    const Model pooled = random_model(kind, true, mcfg, Metric::euclidean(), mm, mn, seed, small);
    out.push_back(verify_model_invariance(pooled, SymmetryGroup::permutation, 1, seed));
    out.push_back(verify_force_equivariance(plain, 2, seed));
    out.push_back(verify_force_fd(plain, seed));
    out.push_back(verify_gradient(plain, seed, 64));
    out.push_back(verify_batch_gradient(pooled, seed));
  }
  if (opt.negative_controls) {
    auto neg = run_negative_controls(std::max(1, std::min(opt.seeds, 10)), opt.base_seed);
    out.insert(out.end(), neg.begin(), neg.end());
  }
  return out;
}

}  // namespace gksn
