#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gksn/error.hpp"
#include "gksn/training.hpp"
#include "gksn/verify.hpp"

using namespace gksn;

namespace {
// Invariant toy target: sum of squared pair distances.
std::vector<Frame> toy_frames(std::size_t count, std::uint64_t seed) {
  std::vector<Frame> out;
  for (std::size_t i = 0; i < count; ++i) {
    Frame f;
    f.coords = random_normal(4, 3, seed * 1000 + i);
    double e = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) e += (f.coords.row(a) - f.coords.row(b)).squaredNorm();
    f.energy = e;
    out.push_back(f);
  }
  return out;
}

Model small_model(ModelKind kind, std::uint64_t seed) {
  ModelSpec spec = ModelSpec::defaults(kind, false);
  spec.hidden = {8};
  Model model = Model::build(spec, FeatureConfig{}, Metric::euclidean(), 4, 3);
  model.init_params(seed);
  return model;
}
}  // namespace

TEST_CASE("huber and nll") {
  CHECK(huber(0.5, 0.0) == 0.125);
  CHECK(huber(3.0, 0.0) == 2.5);
  CHECK(huber(2.0, 0.0) == 1.5);
  CHECK(huber(0.0, 0.0) == 0.0);
  CHECK(huber(1.0, 0.0) == 0.5);
  CHECK(huber(-2.0, 0.0, 0.5) == 0.875);
  CHECK(nll(1.0) == 0.0);
  CHECK(nll(std::exp(-7.0)) == doctest::Approx(7.0).epsilon(1e-15));
  CHECK(std::isinf(nll(0.0)));
  CHECK_THROWS_AS(nll(-1.0), Error);
}

TEST_CASE("adamw step") {
  std::vector<double> p{1.0};
  const std::vector<double> g{1.0};
  AdamWState st(1);
  AdamWOptions opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.0;
  adamw_step(p, g, st, opt);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(st.step == 1);

  // Zero gradient isolates the decoupled decay.
  std::vector<double> q{2.0, -4.0};
  const std::vector<double> zero{0.0, 0.0};
  AdamWState s2(2);
  opt.weight_decay = 0.5;
  adamw_step(q, zero, s2, opt);
  CHECK(q[0] == 2.0 * (1.0 - 0.1 * 0.5));
  CHECK(q[1] == -4.0 * (1.0 - 0.1 * 0.5));

  std::vector<double> r{1.0, 2.0};
  AdamWState s3(1);
  CHECK_THROWS_AS(adamw_step(r, zero, s3, opt), DimensionError);
}

TEST_CASE("plateau scheduler") {
  PlateauScheduler s(1e-3);
  CHECK(s.step(1.0) == 1e-3);
  for (int i = 0; i < 19; ++i) CHECK(s.step(1.0) == 1e-3);
  CHECK(s.step(1.0) == 5e-4);
  CHECK(s.step(0.5) == 5e-4);
  CHECK(s.best() == 0.5);

  // Changes below the threshold count as flat.
  PlateauScheduler t(1e-3);
  t.step(1.0);
  for (int i = 1; i <= 20; ++i) t.step(1.0 - i * 1e-10);
  CHECK(t.lr() == 5e-4);

  PlateauOptions tight;
  tight.patience = 1;
  PlateauScheduler u(4e-5, tight);
  u.step(1.0);
  u.step(1.0);
  CHECK(u.lr() == 2e-5);
  u.step(1.0);
  u.step(1.0);
  CHECK(u.lr() == 1e-5);
}

TEST_CASE("scaler") {
  auto frames = toy_frames(5, 1);
  const OutputScaler s = fit_scaler(frames);
  for (const auto& f : frames) {
    CHECK(s.normalize(*f.energy) >= 0.0);
    CHECK(s.normalize(*f.energy) <= 1.0);
    CHECK(s.denormalize(s.normalize(*f.energy)) == doctest::Approx(*f.energy));
  }
  frames[2].energy.reset();
  CHECK_THROWS_AS(fit_scaler(frames), Error);
  CHECK_THROWS_AS(fit_scaler({}), Error);
}

TEST_CASE("constant predictor") {
  // An MLP with zero parameters predicts 0 in normalized space.
  const auto frames = toy_frames(12, 2);
  Model model = small_model(ModelKind::mlp, 0);
  prepare_model(model, frames);
  for (double& p : model.params()) p = 0.0;
  const Evaluation ev = evaluate(model, frames);
  double expect = 0.0;
  for (const auto& f : frames) expect += huber(0.0, model.scaler().normalize(*f.energy));
  expect /= double(frames.size());
  CHECK(ev.mean_huber == doctest::Approx(expect).epsilon(1e-14));
  CHECK(ev.nll == doctest::Approx(-std::log(expect)));
  CHECK(ev.count == 12);
}

TEST_CASE("perfect and train-mean predictors") {
  // Targets are the model's own predictions: zero loss, +inf NLL.
  auto frames = toy_frames(10, 5);
  Model model = small_model(ModelKind::kan, 1);
  prepare_model(model, frames);
  for (auto& f : frames) f.energy = model.scaler().denormalize(model_energy(model, f));
  model.set_scaler(fit_scaler(frames));
  for (auto& f : frames) f.energy = model.scaler().denormalize(model_energy(model, f));
  const Evaluation perfect = evaluate(model, frames);
  CHECK(perfect.mean_huber < 1e-28);
  CHECK(perfect.nll > 60.0);

  // Constant prediction of the train mean on targets in [0, 1].
  const auto train_set = toy_frames(200, 6);
  const OutputScaler s = fit_scaler(train_set);
  double mean = 0.0;
  for (const auto& f : train_set) mean += s.normalize(*f.energy);
  mean /= double(train_set.size());
  double loss = 0.0;
  for (const auto& f : train_set) loss += huber(mean, s.normalize(*f.energy));
  loss /= double(train_set.size());
  CHECK(std::isfinite(nll(loss)));
  CHECK(nll(loss) > 0.0);
  CHECK(nll(loss) < 10.0);
}

TEST_CASE("training loop") {
  const auto train_set = toy_frames(64, 3);
  const auto test_set = toy_frames(16, 4);
  TrainConfig cfg;
  cfg.epochs = 0;
  Model untouched = small_model(ModelKind::kan, 5);
  prepare_model(untouched, train_set);
  const std::vector<double> before(untouched.params().begin(), untouched.params().end());
  CHECK(train(untouched, train_set, test_set, cfg).epochs.empty());
  CHECK(std::equal(before.begin(), before.end(), untouched.params().begin()));

  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.lr = 1e-2;
  for (ModelKind kind : {ModelKind::kan, ModelKind::mlp}) {
    Model a = small_model(kind, 5), b = small_model(kind, 5);
    prepare_model(a, train_set);
    prepare_model(b, train_set);
    const History ha = train(a, train_set, test_set, cfg);
    const History hb = train(b, train_set, test_set, cfg);
    REQUIRE(ha.epochs.size() == 30);
    CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
    CHECK(ha.epochs.back().test_huber == hb.epochs.back().test_huber);
    CHECK(ha.epochs.back().test_huber < ha.epochs.front().test_huber);
    CHECK(ha.epochs.back().train_huber < ha.epochs.front().train_huber);
    CHECK(ha.epochs.front().seconds == 0.0);

    // The last history row matches a fresh evaluation.
    const Evaluation ev = evaluate(a, test_set);
    CHECK(ev.mean_huber == doctest::Approx(ha.epochs.back().test_huber).epsilon(1e-12));
    CHECK(ev.nll == doctest::Approx(ha.epochs.back().test_nll).epsilon(1e-12));
  }

  cfg.seed = 9;
  Model c = small_model(ModelKind::mlp, 5);
  prepare_model(c, train_set);
  train(c, train_set, test_set, cfg);
  Model d = small_model(ModelKind::mlp, 5);
  prepare_model(d, train_set);
  cfg.seed = 1;
  train(d, train_set, test_set, cfg);
  CHECK_FALSE(std::equal(c.params().begin(), c.params().end(), d.params().begin()));

  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.batch_size = 4;
  CHECK_THROWS_AS(train(c, {}, test_set, cfg), Error);
}

TEST_CASE("history csv") {
  History h;
  h.epochs.push_back({1, 0.5, 0.25, -std::log(0.25), 1e-3, 0.0});
  std::ostringstream out;
  h.write_csv(out);
  const std::string text = out.str();
  CHECK(text.find("epoch") == 0);
  CHECK(text.find("\n1,0.5,0.25,") != std::string::npos);
}
