#pragma once

// Numerical checks of the representation identities and symmetry claims.
// Every check returns a VerifyReport; negative controls are reports that are
// expected to fail.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gksn/network.hpp"

namespace gksn {

struct VerifyReport {
  std::string check;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  bool expect_pass = true;  // false for negative controls
  std::uint64_t seed = 0;
  std::vector<long> dims;
  std::string detail;

  /// True when the outcome matches the expectation.
  bool as_expected() const { return pass == expect_pass; }
};

VerifyReport make_report(std::string check, double residual, double tolerance,
                         std::uint64_t seed, std::vector<long> dims);

std::string reports_to_json(const std::vector<VerifyReport>& reports);

/// Standard normal m x n matrix from `seed`.
Eigen::MatrixXd random_normal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

/// Orthogonal factor of a random normal matrix.
Eigen::MatrixXd random_orthogonal(Eigen::Index n, std::uint64_t seed);

/// Boost with the given rapidity along a random spatial axis, composed with a
/// random spatial rotation. Preserves diag(1, -1, ..., -1). Requires
/// |rapidity| <= 2.
Eigen::MatrixXd random_boost(Eigen::Index n, double rapidity, std::uint64_t seed);

/// Relative Frobenius residual of the Gram reconstruction identity with
/// random X (m x n) and Y (k x n). With `rank_deficient` all rows of Y are
/// equal, which must make the check fail. Tolerance 1e-8.
VerifyReport verify_lemma_a14(Eigen::Index m, Eigen::Index n, Eigen::Index k, std::uint64_t seed,
                              bool rank_deficient = false);

/// Gram matrix, basis-subset features and their Gram before and after a
/// random rotation; residual is the largest of the three relative residuals.
VerifyReport verify_rotation_listing(Eigen::Index m, Eigen::Index n, std::uint64_t seed,
                                     bool identity = false);

/// featurize(X Q^T + t) against featurize(X), centered, Euclidean.
VerifyReport verify_feature_invariance(const FeatureConfig& config, Eigen::Index m, Eigen::Index n,
                                       int trials, std::uint64_t seed);

/// Minkowski Gram matrix under random boosts with |rapidity| <= 2.
VerifyReport verify_lorentz_gram(Eigen::Index m, Eigen::Index n, int trials, std::uint64_t seed);

enum class SymmetryGroup { orthogonal, lorentz, permutation };

using EnergyFn = std::function<double(const Frame&)>;

/// max |E(gX) - E(X)| / (1 + |E(X)|) over trials. For the permutation group
/// with m <= 6 all m! permutations are checked. Tolerance 1e-6 (0 for
/// permutations when `exact_perm`).
VerifyReport verify_invariance(const EnergyFn& energy, Eigen::Index m, Eigen::Index n,
                               SymmetryGroup group, int trials, std::uint64_t seed,
                               bool exact_perm = false);

VerifyReport verify_model_invariance(const Model& model, SymmetryGroup group, int trials,
                                     std::uint64_t seed);

/// Max relative |forces(XQ^T) - forces(X) Q^T| over trials. Tolerance 1e-5.
VerifyReport verify_force_equivariance(const Model& model, int trials, std::uint64_t seed);

/// Reverse-mode forces against central differences of the energy (step 1e-5).
/// Tolerance 1e-4.
VerifyReport verify_force_fd(const Model& model, std::uint64_t seed);

/// The same checks on caller-supplied frames (one trial per frame). Frames
/// within 1e-3 of a ReLU kink are skipped by the finite-difference check.
VerifyReport verify_frames_invariance(const Model& model, std::span<const Frame> frames,
                                      SymmetryGroup group, std::uint64_t seed);
VerifyReport verify_frames_force_fd(const Model& model, std::span<const Frame> frames,
                                   std::uint64_t seed);

/// Reverse-mode parameter gradient of a random model against central
/// differences (step 1e-5), re-sampling frames that sit near a kink. When
/// `max_coords` > 0 only that many randomly chosen parameters are checked.
VerifyReport verify_gradient(const Model& model, std::uint64_t seed, std::size_t max_coords = 0);

/// Batched training gradient against the tape gradient on a small batch.
VerifyReport verify_batch_gradient(const Model& model, std::uint64_t seed);

/// A randomly initialized model for checks; frames m x n. Empty `hidden`
/// and zero `basis` keep the defaults.
Model random_model(ModelKind kind, bool perm, const FeatureConfig& config, const Metric& metric,
                   Eigen::Index m, Eigen::Index n, std::uint64_t seed,
                   std::vector<int> hidden = {}, int basis = 0);

struct SuiteOptions {
  int seeds = 10;
  std::uint64_t base_seed = 0;
  bool negative_controls = true;
};

/// Runs every check family over `seeds` seeds with dimensions drawn per seed
/// (m <= 20, n <= 6 for the algebraic checks, small frames for model checks).
std::vector<VerifyReport> run_suite(const SuiteOptions& opt);

/// Only the negative controls.
std::vector<VerifyReport> run_negative_controls(int seeds, std::uint64_t base_seed);

}  // namespace gksn
