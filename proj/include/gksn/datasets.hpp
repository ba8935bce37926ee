#pragma once

// Synthetic Lennard-Jones and linear-polymer datasets, and the frames file
// format used to exchange configurations.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gksn/invariants.hpp"
#include "gksn/tape.hpp"

namespace gksn {

/// f(x) = x + sum_l a_l sin(w_l x)
struct OscillatorySpec {
  std::array<double, 3> a{1.0, 0.3, 0.1};
  std::array<double, 3> w{11.0, 30.0, 50.0};

  static OscillatorySpec standard() { return {}; }
  static OscillatorySpec none() { return {{0.0, 0.0, 0.0}, {11.0, 30.0, 50.0}}; }
  static OscillatorySpec parse(const std::string& name);  // "default" | "none"
  bool is_zero() const { return a[0] == 0.0 && a[1] == 0.0 && a[2] == 0.0; }

  template <class T>
  T apply(const T& x) const {
    using std::sin;
    T y = x;
    for (std::size_t l = 0; l < a.size(); ++l) {
      if (a[l] != 0.0) y = y + sin(x * w[l]) * a[l];
    }
    return y;
  }
};

enum class SystemKind { lj, polymer };

std::string to_string(SystemKind kind);
SystemKind parse_system_kind(const std::string& s);

struct GenConfig {
  Eigen::Index m = 4;
  Eigen::Index n = 3;
  std::size_t num_samples = 10000;
  std::uint64_t seed = 42;
  double em_lr = 0.01;
  int em_iters = 500;
  double lj_a = 1.0;
  double bond_target = 1.0;  // polymer rest length d_hat
  int threads = 1;

  void validate() const;
};

/// Energy model over row-major coordinates (m x n).
struct Potential {
  SystemKind kind = SystemKind::lj;
  Eigen::Index m = 0, n = 0;
  double a = 1.0;
  double d_hat = 1.0;
  OscillatorySpec osc;

  template <class T>
  T energy(std::span<const T> x) const;

  /// Tape function of the flattened coordinates.
  ad::TapeFunction tape_function() const;
};

/// Sum over unordered pairs of f((a/r)^12 - (a/r)^6). Throws Error for
/// coincident particles.
double lj_energy(const Frame& frame, double a, const OscillatorySpec& osc);

/// Bonds (i, i+1) contribute f((d - d_hat)^2), other pairs the LJ term.
double polymer_energy(const Frame& frame, double d_hat, double a, const OscillatorySpec& osc);

struct MinimizeResult {
  Frame frame;                  // final positions, energy attached
  std::vector<double> energies; // energy after each iteration, starting with the initial one
  double initial_grad_norm = 0.0;
  double final_grad_norm = 0.0;
  bool stalled = false;  // the line search found no decrease at some iteration
};

/// Gradient descent x <- x - lr * grad U. A step that increases the energy
/// is retried with half the step, at most 20 times; if none is accepted the
/// positions stay put. Per-step displacement of any particle is capped at
/// `max_step`. Throws Error on a non-finite energy. When `value` is given
/// it must agree with `energy` and is used for the line search, so only
/// accepted points are differentiated.
using ValueFunction = std::function<double(std::span<const double>)>;
MinimizeResult minimize(const Frame& frame, const ad::TapeFunction& energy, double lr, int iters,
                        double max_step = 0.1, const ValueFunction& value = {});

/// Random start for frame `index` of a run: standard normal coordinates
/// scaled so the mean nearest-neighbour distance equals `a`.
Frame initial_frame(Eigen::Index m, Eigen::Index n, double a, std::uint64_t seed,
                    std::uint64_t index, int attempt);

/// Per-frame random stream seed derived from (seed, stream, index).
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// num_samples minimized frames with energies. Deterministic given the seed
/// and independent of the thread count.
std::vector<Frame> generate(SystemKind kind, const GenConfig& config, const OscillatorySpec& osc);

// ---------------------------------------------------------------------------
// Frames file

struct Dataset {
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  std::vector<Frame> frames;
  std::vector<std::string> warnings;
};

/// Text format: header "m n"; per frame "E <energy>" (or "E nan") followed
/// by m lines "<type> <x_1> ... <x_n>". Lines starting with '#' are ignored.
void save_frames(const Dataset& dataset, const std::string& path);
void write_frames(const Dataset& dataset, std::ostream& out);
/// Throws ParseError (with line number) on malformed input.
Dataset load_frames(const std::string& path);
Dataset read_frames(std::istream& in);

/// Indices of a seeded shuffle of [0, count).
std::vector<std::size_t> seeded_permutation(std::size_t count, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

enum class SplitKind { ratio_80_20, md };

SplitKind parse_split_kind(const std::string& s);
std::string to_string(SplitKind kind);

/// 80/20: first 80% of a seeded shuffle for training, the rest for testing.
/// md: 8000 training and 200 test frames after a seeded shuffle; needs at
/// least 8200 frames.
Split make_split(std::size_t count, SplitKind kind, std::uint64_t seed);

// ---------------------------------------------------------------------------

template <class T>
T Potential::energy(std::span<const T> x) const {
  using ad::value_of;
  using std::sqrt;
  auto sq_dist = [&](Eigen::Index i, Eigen::Index j) {
    std::vector<T> d;
    d.reserve(std::size_t(n));
    for (Eigen::Index c = 0; c < n; ++c) d.push_back(x[i * n + c] - x[j * n + c]);
    T acc = d[0] * d[0];
    for (std::size_t c = 1; c < d.size(); ++c) acc = acc + d[c] * d[c];
    return acc;
  };
  auto lj_term = [&](const T& r2) {
    if (value_of(r2) == 0.0) throw Error("lj energy: coincident particles");
    const T inv = (a * a) / r2;  // (a/r)^2
    const T s6 = inv * inv * inv;
    return osc.apply<T>(s6 * s6 - s6);
  };

  std::optional<T> total;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const T r2 = sq_dist(i, j);
      T term;
      if (kind == SystemKind::polymer && j == i + 1) {
        if (value_of(r2) == 0.0) throw Error("polymer energy: coincident bonded particles");
        const T dev = sqrt(r2) - d_hat;
        term = osc.apply<T>(dev * dev);
      } else {
        term = lj_term(r2);
      }
      total = total ? *total + term : term;
    }
  }
  if (!total) return x[0] * 0.0;
  return *total;
}

}  // namespace gksn
