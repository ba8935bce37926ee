#include "gksn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "gksn/datasets.hpp"

namespace gksn {

double huber(double pred, double target, double delta) {
  const double e = std::abs(pred - target);
  if (e <= delta) return 0.5 * e * e;
  return delta * (e - 0.5 * delta);
}

double nll(double mean_loss) {
  if (mean_loss == 0.0) return std::numeric_limits<double>::infinity();
  if (!(mean_loss > 0.0)) throw Error("nll: mean loss must be positive");
  return -std::log(mean_loss);
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWOptions& opt) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw DimensionError("adamw_step: parameter, gradient and state sizes differ");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, double(state.step));
  const double decay = 1.0 - opt.lr * opt.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] *= decay;
    const double g = grads[i];
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

double PlateauScheduler::step(double loss) {
  if (loss < best_ - opt_.threshold) {
    best_ = loss;
    bad_ = 0;
    return lr_;
  }
  if (++bad_ >= opt_.patience) {
    lr_ = std::max(lr_ * opt_.factor, opt_.min_lr);
    bad_ = 0;
  }
  return lr_;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error("epochs must be >= 0");
  if (batch_size == 0) throw Error("batch size must be positive");
  if (!(lr > 0.0) || weight_decay < 0.0 || !(huber_delta > 0.0)) {
    throw Error("lr and huber delta must be positive, weight decay non-negative");
  }
  if (!(scheduler.factor > 0.0 && scheduler.factor < 1.0) || scheduler.patience < 1) {
    throw Error("scheduler needs 0 < factor < 1 and patience >= 1");
  }
}

namespace {
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void History::write_csv(std::ostream& out) const {
  out << "epoch,train_huber,test_huber,test_nll,lr,seconds\n";
  for (const EpochRecord& r : epochs) {
    out << r.epoch << ',' << fmt(r.train_huber) << ',' << fmt(r.test_huber) << ','
        << fmt(r.test_nll) << ',' << fmt(r.lr) << ',' << fmt(r.seconds) << '\n';
  }
}

void History::save_csv(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    write_csv(out);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot rename " + tmp);
}

OutputScaler fit_scaler(const std::vector<Frame>& frames) {
  if (frames.empty()) throw Error("cannot fit a target scaler on zero frames");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const Frame& f : frames) {
    if (!f.energy || !std::isfinite(*f.energy)) throw Error("training frame without a finite energy");
    lo = std::min(lo, *f.energy);
    hi = std::max(hi, *f.energy);
  }
  if (hi == lo) hi = lo + 1.0;
  return {lo, hi};
}

Eigen::VectorXd normalized_targets(const Model& model, const std::vector<Frame>& frames) {
  Eigen::VectorXd y(Eigen::Index(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].energy) throw Error("frame " + std::to_string(i) + " has no energy");
    y(Eigen::Index(i)) = model.scaler().normalize(*frames[i].energy);
  }
  return y;
}

Evaluation evaluate(const Model& model, const RowMatrix& inputs, const Eigen::VectorXd& targets,
                    double delta) {
  if (inputs.rows() == 0) throw Error("evaluate: empty test set");
  const Eigen::VectorXd pred = predict(model, inputs);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) sum += huber(pred(i), targets(i), delta);
  Evaluation ev;
  ev.count = std::size_t(pred.size());
  ev.mean_huber = sum / double(pred.size());
  ev.nll = nll(ev.mean_huber);
  return ev;
}

Evaluation evaluate(const Model& model, const std::vector<Frame>& test, double delta) {
  if (test.empty()) throw Error("evaluate: empty test set");
  return evaluate(model, prepare_inputs(model, test), normalized_targets(model, test), delta);
}

void prepare_model(Model& model, const std::vector<Frame>& train_set) {
  model.set_scaler(fit_scaler(train_set));
  model.set_input_norm(fit_standardizer(model, train_set));
}

History train(Model& model, const std::vector<Frame>& train_set, const std::vector<Frame>& test_set,
              const TrainConfig& config) {
  config.validate();
  History history;
  if (config.epochs == 0) return history;
  if (train_set.empty() || test_set.empty()) throw Error("train: empty train or test set");

  const RowMatrix x_train = prepare_inputs(model, train_set);
  const RowMatrix x_test = prepare_inputs(model, test_set);
  const Eigen::VectorXd y_train = normalized_targets(model, train_set);
  const Eigen::VectorXd y_test = normalized_targets(model, test_set);

  AdamWState state(model.param_count());
  AdamWOptions opt;
  opt.lr = config.lr;
  opt.weight_decay = config.weight_decay;
  PlateauScheduler scheduler(config.lr, config.scheduler);
  std::vector<double> grad(model.param_count());
  std::vector<Eigen::Index> order(train_set.size());
  std::mt19937_64 shuffle_rng(stream_seed(config.seed, 0x73687566ULL, 0));

  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = Eigen::Index(i);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng() % i)]);
    }
    const double epoch_lr = scheduler.lr();
    opt.lr = epoch_lr;
    double loss_sum = 0.0;
    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const Eigen::Index> rows(order.data() + begin, end - begin);
      const double loss = loss_and_gradient(model, x_train, y_train, rows, config.huber_delta, grad);
      if (!std::isfinite(loss)) {
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batch));
      }
      loss_sum += loss * double(rows.size());
      adamw_step(model.params(), grad, state, opt);
    }
    const Evaluation ev = evaluate(model, x_test, y_test, config.huber_delta);
    scheduler.step(ev.mean_huber);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_huber = loss_sum / double(order.size());
    rec.test_huber = ev.mean_huber;
    rec.test_nll = ev.nll;
    rec.lr = epoch_lr;
    if (config.record_time) {
      rec.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    history.epochs.push_back(rec);
  }
  return history;
}

}  // namespace gksn
