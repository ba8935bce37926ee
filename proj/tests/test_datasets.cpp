#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gksn/datasets.hpp"
#include "gksn/error.hpp"
#include "gksn/verify.hpp"

using namespace gksn;

namespace {
Frame pair_at(double r, Eigen::Index n = 3) {
  Frame f;
  f.coords = Eigen::MatrixXd::Zero(2, n);
  f.coords(1, 0) = r;
  return f;
}

double min_distance(const Frame& f) {
  double best = 1e300;
  for (Eigen::Index i = 0; i < f.m(); ++i)
    for (Eigen::Index j = i + 1; j < f.m(); ++j)
      best = std::min(best, (f.coords.row(i) - f.coords.row(j)).norm());
  return best;
}

Potential lj_pot(Eigen::Index m, Eigen::Index n, OscillatorySpec osc) {
  Potential p;
  p.kind = SystemKind::lj;
  p.m = m;
  p.n = n;
  p.osc = osc;
  return p;
}
}  // namespace

TEST_CASE("oscillatory term") {
  const auto osc = OscillatorySpec::standard();
  CHECK(osc.apply(0.0) == 0.0);
  CHECK(osc.apply(-0.25) == doctest::Approx(-0.90642879534963329).epsilon(1e-14));
  CHECK(OscillatorySpec::none().apply(0.7) == 0.7);
  CHECK(OscillatorySpec::parse("none").is_zero());
  CHECK_THROWS_AS(OscillatorySpec::parse("loud"), Error);
}

TEST_CASE("lennard-jones pair energy") {
  const double rmin = std::pow(2.0, 1.0 / 6.0);
  CHECK(lj_energy(pair_at(1.0), 1.0, OscillatorySpec::none()) == 0.0);
  CHECK(lj_energy(pair_at(rmin), 1.0, OscillatorySpec::none()) == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK(lj_energy(pair_at(rmin), 1.0, OscillatorySpec::standard()) ==
        doctest::Approx(-0.90642879534963329).epsilon(1e-12));
  CHECK(lj_energy(pair_at(1.5), 1.0, OscillatorySpec::standard()) ==
        doctest::Approx(-0.9775377248198126).epsilon(1e-12));
  // Scale invariance in a.
  CHECK(lj_energy(pair_at(2.0 * rmin), 2.0, OscillatorySpec::none()) == doctest::Approx(-0.25));
  CHECK_THROWS_AS(lj_energy(pair_at(0.0), 1.0, OscillatorySpec::none()), Error);

  Frame tri;
  tri.coords = Eigen::MatrixXd::Zero(3, 2);
  tri.coords.row(1) << 1.0, 0.0;
  tri.coords.row(2) << 0.5, std::sqrt(0.75);
  CHECK(lj_energy(tri, 1.0, OscillatorySpec::standard()) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("polymer energy") {
  // Bonded pair stretched by 1 above the rest length.
  CHECK(polymer_energy(pair_at(2.0), 1.0, 1.0, OscillatorySpec::standard()) ==
        doctest::Approx(-0.32263717914895487).epsilon(1e-12));
  CHECK(polymer_energy(pair_at(1.0), 1.0, 1.0, OscillatorySpec::none()) == 0.0);
  CHECK(polymer_energy(pair_at(1.5), 2.0, 1.0, OscillatorySpec::none()) == doctest::Approx(0.25));

  // Three collinear beads: bonds at rest length, non-bonded pair at 2 uses LJ.
  Frame chain;
  chain.coords = Eigen::MatrixXd::Zero(3, 1);
  chain.coords(1, 0) = 1.0;
  chain.coords(2, 0) = 2.0;
  const double x = std::pow(0.5, 12) - std::pow(0.5, 6);
  CHECK(polymer_energy(chain, 1.0, 1.0, OscillatorySpec::none()) == doctest::Approx(x));
  Frame one;
  one.coords = Eigen::MatrixXd::Zero(1, 3);
  CHECK_THROWS_AS(polymer_energy(one, 1.0, 1.0, OscillatorySpec::none()), Error);
}

TEST_CASE("energies are invariant under rigid motions and relabelling") {
  const auto osc = OscillatorySpec::standard();
  for (std::uint64_t s = 0; s < 10; ++s) {
    Frame f;
    f.coords = random_normal(5, 3, s) * 1.5;
    const auto lj = [&](const Frame& g) { return lj_energy(g, 1.0, osc); };
    CHECK(verify_invariance(lj, 5, 3, SymmetryGroup::orthogonal, 3, s).pass);
    CHECK(verify_invariance(lj, 5, 3, SymmetryGroup::permutation, 3, s).pass);
    const auto poly = [&](const Frame& g) { return polymer_energy(g, 1.0, 1.0, osc); };
    CHECK(verify_invariance(poly, 5, 3, SymmetryGroup::orthogonal, 3, s).pass);
  }
}

TEST_CASE("potential matches the frame functions") {
  Frame f;
  f.coords = random_normal(4, 3, 7) * 1.3;
  const std::vector<double> x(f.coords.data(), f.coords.data() + f.coords.size());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = f.coords;
  const std::vector<double> xr(rm.data(), rm.data() + rm.size());
  const Potential p = lj_pot(4, 3, OscillatorySpec::standard());
  CHECK(p.energy<double>(xr) == doctest::Approx(lj_energy(f, 1.0, p.osc)).epsilon(1e-13));
  CHECK(ad::grad_check(p.tape_function(), xr, 1e-7).max_rel_error < 1e-5);
}

TEST_CASE("minimization") {
  const Potential p = lj_pot(2, 3, OscillatorySpec::none());
  const auto r = minimize(pair_at(1.5), p.tape_function(), 0.01, 500);
  const double d = (r.frame.coords.row(0) - r.frame.coords.row(1)).norm();
  CHECK(std::abs(d - 1.122462048309373) / 1.122462048309373 < 0.02);
  for (std::size_t i = 1; i < r.energies.size(); ++i) CHECK(r.energies[i] <= r.energies[i - 1]);
  CHECK(r.final_grad_norm <= 0.1 * r.initial_grad_norm);

  // A start at the exact minimum stays put.
  const auto still = minimize(pair_at(std::pow(2.0, 1.0 / 6.0)), p.tape_function(), 0.01, 50);
  CHECK((still.frame.coords - pair_at(std::pow(2.0, 1.0 / 6.0)).coords).cwiseAbs().maxCoeff() < 1e-12);

  // Zero iterations return the start.
  const auto none = minimize(pair_at(1.5), p.tape_function(), 0.01, 0);
  CHECK(none.frame.coords == pair_at(1.5).coords);
  CHECK(none.energies.size() == 1);

  // Oscillatory energy: descent still never increases the energy.
  const Potential po = lj_pot(4, 3, OscillatorySpec::standard());
  const Frame start = initial_frame(4, 3, 1.0, 5, 0, 0);
  const auto ro = minimize(start, po.tape_function(), 0.01, 200);
  for (std::size_t i = 1; i < ro.energies.size(); ++i) CHECK(ro.energies[i] <= ro.energies[i - 1]);
}

TEST_CASE("generation") {
  GenConfig cfg;
  cfg.num_samples = 24;
  cfg.em_iters = 100;
  cfg.seed = 3;
  const auto a = generate(SystemKind::lj, cfg, OscillatorySpec::standard());
  REQUIRE(a.size() == 24);
  const auto b = generate(SystemKind::lj, cfg, OscillatorySpec::standard());
  cfg.threads = 3;
  const auto c = generate(SystemKind::lj, cfg, OscillatorySpec::standard());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].coords == b[i].coords);
    CHECK(a[i].coords == c[i].coords);
    CHECK(a[i].energy == c[i].energy);
    CHECK(min_distance(a[i]) > 0.1);
    CHECK(*a[i].energy == doctest::Approx(lj_energy(a[i], 1.0, OscillatorySpec::standard())));
  }

  cfg.num_samples = 0;
  CHECK(generate(SystemKind::lj, cfg, OscillatorySpec::standard()).empty());

  cfg.num_samples = 8;
  cfg.m = 5;
  const auto poly = generate(SystemKind::polymer, cfg, OscillatorySpec::none());
  for (const auto& f : poly) CHECK(*f.energy == doctest::Approx(polymer_energy(f, 1.0, 1.0, OscillatorySpec::none())));

  GenConfig bad;
  bad.m = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(parse_system_kind("argon"), Error);
}

TEST_CASE("frames file round trip") {
  Dataset ds;
  ds.m = 3;
  ds.n = 2;
  for (int i = 0; i < 4; ++i) {
    Frame f;
    f.coords = random_normal(3, 2, std::uint64_t(i));
    f.types = {0, 1, i};
    if (i != 2) f.energy = -1.0 / (i + 3.0);
    ds.frames.push_back(f);
  }
  std::stringstream ss;
  write_frames(ds, ss);
  const Dataset back = read_frames(ss);
  REQUIRE(back.frames.size() == 4);
  CHECK(back.m == 3);
  CHECK(back.n == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.frames[i].coords == ds.frames[i].coords);
    CHECK(back.frames[i].types == ds.frames[i].types);
    CHECK(back.frames[i].energy.has_value() == ds.frames[i].energy.has_value());
    if (ds.frames[i].energy) CHECK(*back.frames[i].energy == *ds.frames[i].energy);
  }
}

TEST_CASE("frames file errors") {
  auto error_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_frames(in);
    } catch (const ParseError& e) {
      return std::make_pair(e.line(), std::string(e.what()));
    }
    return std::make_pair(0L, std::string());
  };
  const auto bad_num = error_of("2 1\nE 1.0\n0 1.0\n0 abc\n");
  CHECK(bad_num.first == 4);
  CHECK(bad_num.second.find("line 4") != std::string::npos);

  const auto short_frame = error_of("2 1\nE 1.0\n0 1.0\nE 2.0\n0 1\n0 2\n");
  CHECK(short_frame.first > 0);
  CHECK(short_frame.second.find("frame 0") != std::string::npos);

  const auto wide = error_of("2 2\nE 0\n0 1 2\n0 1 2 3\n");
  CHECK(wide.first == 4);
  CHECK(wide.second.find("frame 0") != std::string::npos);

  CHECK(error_of("2\n").first == 1);
  CHECK(error_of("2 1\n0 1\n").first == 2);

  std::istringstream empty("");
  const Dataset e = read_frames(empty);
  CHECK(e.frames.empty());
  CHECK(e.warnings.size() == 1);

  std::istringstream comments("# produced elsewhere\n1 1\nE nan\n0 0.5\n");
  const Dataset c = read_frames(comments);
  REQUIRE(c.frames.size() == 1);
  CHECK_FALSE(c.frames[0].energy.has_value());
}

TEST_CASE("splits") {
  const Split s = make_split(100, SplitKind::ratio_80_20, 4);
  CHECK(s.train.size() == 80);
  CHECK(s.test.size() == 20);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(all[i] == i);
  CHECK(make_split(100, SplitKind::ratio_80_20, 4).test == s.test);
  CHECK(make_split(100, SplitKind::ratio_80_20, 5).test != s.test);

  const Split md = make_split(8200, SplitKind::md, 1);
  CHECK(md.train.size() == 8000);
  CHECK(md.test.size() == 200);
  CHECK(make_split(10000, SplitKind::md, 1).test.size() == 200);
  CHECK_THROWS_AS(make_split(8199, SplitKind::md, 1), Error);
  CHECK(parse_split_kind("md") == SplitKind::md);
  CHECK_THROWS_AS(parse_split_kind("50/50"), Error);
}
