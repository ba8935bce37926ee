#pragma once

#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gksn/batch.hpp"
#include "gksn/network.hpp"

namespace gksn {

/// e = |pred - target|; e <= delta gives e^2/2, otherwise delta (e - delta/2).
double huber(double pred, double target, double delta = 1.0);

/// -ln(mean_loss); +infinity when mean_loss is 0.
double nll(double mean_loss);

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamWState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
};

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 1e-9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay (params scaled by 1 - lr * wd), then the
/// bias-corrected Adam update.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWOptions& opt);

struct PlateauOptions {
  double factor = 0.5;
  int patience = 20;
  double min_lr = 1e-5;
  double threshold = 1e-8;
};

/// Reduce-on-plateau: after `patience` consecutive evaluations without an
/// improvement of at least `threshold`, lr <- max(lr * factor, min_lr).
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, PlateauOptions opt = {}) : lr_(lr), opt_(opt) {}

  double step(double loss);
  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  PlateauOptions opt_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

struct TrainConfig {
  int epochs = 1000;
  std::size_t batch_size = 4092;
  double lr = 1e-3;
  double weight_decay = 1e-9;
  PlateauOptions scheduler;
  std::uint64_t seed = 1;
  double huber_delta = 1.0;
  bool record_time = false;  // wall time per epoch in the history

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_huber = 0.0;
  double test_huber = 0.0;
  double test_nll = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;

  void write_csv(std::ostream& out) const;
  void save_csv(const std::string& path) const;
};

struct Evaluation {
  double mean_huber = 0.0;
  double nll = 0.0;
  std::size_t count = 0;
};

/// Min-max scaler over the energies of `frames`. Throws if any is missing.
OutputScaler fit_scaler(const std::vector<Frame>& frames);

/// Targets in normalized space.
Eigen::VectorXd normalized_targets(const Model& model, const std::vector<Frame>& frames);

/// Mean Huber loss and NLL over a prepared input matrix.
Evaluation evaluate(const Model& model, const RowMatrix& inputs, const Eigen::VectorXd& targets,
                    double delta = 1.0);
Evaluation evaluate(const Model& model, const std::vector<Frame>& test, double delta = 1.0);

/// Runs the training loop; call prepare_model first. Deterministic given the
/// seed. Zero epochs return an empty history and leave the model untouched.
History train(Model& model, const std::vector<Frame>& train_set, const std::vector<Frame>& test_set,
              const TrainConfig& config);

/// Fits input standardization and target scaling on the training frames.
void prepare_model(Model& model, const std::vector<Frame>& train_set);

}  // namespace gksn
