#include <doctest.h>

#include <cmath>

#include "gksn/error.hpp"
#include "gksn/verify.hpp"

using namespace gksn;

TEST_CASE("random orthogonal matrices") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Eigen::Index n = 1 + Eigen::Index(s % 6);
    const Eigen::MatrixXd q = random_orthogonal(n, s);
    CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(random_orthogonal(3, 7) == random_orthogonal(3, 7));
  CHECK(random_orthogonal(3, 7) != random_orthogonal(3, 8));
}

TEST_CASE("random boosts preserve the minkowski form") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Eigen::Index n = 2 + Eigen::Index(s % 4);
    Eigen::MatrixXd eta = Eigen::MatrixXd::Identity(n, n);
    eta(0, 0) = 1.0;
    for (Eigen::Index i = 1; i < n; ++i) eta(i, i) = -1.0;
    const Eigen::MatrixXd l = random_boost(n, 1.7, s);
    CHECK((l.transpose() * eta * l - eta).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(l(0, 0) >= 1.0);
  }
  // Zero rapidity leaves only a spatial rotation.
  const Eigen::MatrixXd r = random_boost(3, 0.0, 2);
  CHECK(std::abs(r(0, 0) - 1.0) < 1e-15);
  CHECK(std::abs(std::cosh(2.0) - random_boost(2, 2.0, 0)(0, 0)) < 1e-12);
  CHECK_THROWS(random_boost(3, 2.5, 0));
}

TEST_CASE("reconstruction checks") {
  const auto listing = verify_lemma_a14(15, 3, 5, 0);
  CHECK(listing.pass);
  CHECK(listing.residual <= 1e-8);
  CHECK(listing.dims == std::vector<long>{15, 3, 5});
  CHECK(verify_lemma_a14(3, 3, 3, 1).pass);

  const auto deficient = verify_lemma_a14(6, 3, 4, 2, true);
  CHECK_FALSE(deficient.pass);
  CHECK_FALSE(deficient.expect_pass);
  CHECK(deficient.as_expected());

  CHECK(verify_rotation_listing(5, 3, 0).pass);
  CHECK(verify_rotation_listing(5, 3, 0, true).residual == 0.0);
}

TEST_CASE("feature and gram invariance") {
  FeatureConfig cfg;
  CHECK(verify_feature_invariance(cfg, 6, 3, 4, 1).pass);
  CHECK(verify_lorentz_gram(5, 4, 4, 3).pass);
}

TEST_CASE("invariance checks detect a broken energy") {
  const EnergyFn good = [](const Frame& f) {
    const Eigen::RowVectorXd c = f.coords.colwise().mean();
    return (f.coords.rowwise() - c).squaredNorm();
  };
  const EnergyFn bad = [](const Frame& f) { return f.coords(0, 0); };
  CHECK(verify_invariance(good, 5, 3, SymmetryGroup::orthogonal, 5, 0).pass);
  CHECK(verify_invariance(good, 5, 3, SymmetryGroup::permutation, 5, 0).pass);
  CHECK_FALSE(verify_invariance(bad, 5, 3, SymmetryGroup::orthogonal, 5, 0).pass);
  CHECK_FALSE(verify_invariance(bad, 5, 3, SymmetryGroup::permutation, 5, 0).pass);

  for (const auto& r : run_negative_controls(3, 0)) {
    CHECK_FALSE(r.pass);
    CHECK(r.as_expected());
  }
}

TEST_CASE("model checks") {
  const Model kan = random_model(ModelKind::kan, false, FeatureConfig{}, Metric::euclidean(), 4, 3, 1, {8});
  CHECK(verify_model_invariance(kan, SymmetryGroup::orthogonal, 3, 1).pass);
  CHECK(verify_force_equivariance(kan, 3, 1).pass);
  CHECK(verify_force_fd(kan, 1).pass);
  CHECK(verify_gradient(kan, 1, 32).pass);
  CHECK(verify_batch_gradient(kan, 1).pass);

  FeatureConfig quad;
  quad.linear = false;
  const Model pooled = random_model(ModelKind::mlp, true, quad, Metric::euclidean(), 5, 3, 2, {8});
  const auto perm = verify_model_invariance(pooled, SymmetryGroup::permutation, 3, 2);
  CHECK(perm.pass);
  CHECK(perm.residual == 0.0);

  const Model lorentz = random_model(ModelKind::kan, false, FeatureConfig{}, Metric::minkowski(), 4, 3, 3, {8});
  CHECK(verify_model_invariance(lorentz, SymmetryGroup::lorentz, 3, 3).pass);
}

TEST_CASE("suite and json") {
  SuiteOptions opt;
  opt.seeds = 2;
  const auto reports = run_suite(opt);
  REQUIRE(!reports.empty());
  for (const auto& r : reports) CHECK(r.as_expected());
  const std::string json = reports_to_json(reports);
  CHECK(json.find("\"check\"") != std::string::npos);
  CHECK(json.find("lemma-a14") != std::string::npos);
  CHECK(run_suite(opt).size() == reports.size());
}
