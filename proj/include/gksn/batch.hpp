#pragma once

// Batched evaluation and analytic back-propagation for training.
//
// Frames are first reduced to a fixed input matrix (one row per frame). For
// plain models that is the standardized feature vector. For pooled models the
// bank is linear in its parameters, so the row holds the pair-averaged basis
// expansion of the standardized pair scalars and the bank becomes one matrix
// product. The scalar reference path in network.hpp is the oracle for this
// one.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "gksn/network.hpp"

namespace gksn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raw first-layer scalars: one row per frame (plain models) or one row per
/// pair (pooled models), before standardization.
RowMatrix raw_inputs(const Model& model, const std::vector<Frame>& frames);

/// Per-column mean and 1/std of raw_inputs over `frames`; constant columns
/// get inv_std = 1.
Standardizer fit_standardizer(const Model& model, const std::vector<Frame>& frames);

/// Input matrix consumed by predict() and loss_and_gradient().
RowMatrix prepare_inputs(const Model& model, const std::vector<Frame>& frames);

/// Normalized energies for each row of `inputs`.
Eigen::VectorXd predict(const Model& model, const RowMatrix& inputs);

/// Mean Huber loss over the rows in `rows` (indices into inputs/targets) and
/// its gradient w.r.t. all model parameters, written into `grad`.
double loss_and_gradient(const Model& model, const RowMatrix& inputs,
                         const Eigen::VectorXd& targets, std::span<const Eigen::Index> rows,
                         double delta, std::span<double> grad);

}  // namespace gksn
