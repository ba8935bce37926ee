#include "gksn/datasets.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

namespace gksn {

OscillatorySpec OscillatorySpec::parse(const std::string& name) {
  if (name == "default") return standard();
  if (name == "none" || name == "zero") return none();
  throw Error("unknown oscillation '" + name + "' (expected default or none)");
}

std::string to_string(SystemKind kind) { return kind == SystemKind::lj ? "lj" : "polymer"; }

SystemKind parse_system_kind(const std::string& s) {
  if (s == "lj") return SystemKind::lj;
  if (s == "polymer") return SystemKind::polymer;
  throw Error("unknown system kind '" + s + "' (expected lj or polymer)");
}

void GenConfig::validate() const {
  if (m < 2) throw Error("generation needs m >= 2");
  if (n < 1) throw Error("generation needs n >= 1");
  if (!(em_lr > 0.0) || em_iters < 0) throw Error("energy minimization needs lr > 0, iters >= 0");
  if (!(lj_a > 0.0) || !(bond_target > 0.0)) throw Error("length scales must be positive");
  if (threads < 1) throw Error("threads must be >= 1");
}

ad::TapeFunction Potential::tape_function() const {
  Potential self = *this;
  return [self](ad::Tape&, std::span<const ad::Var> x) { return self.energy<ad::Var>(x); };
}

namespace {
std::vector<double> flat_coords(const Frame& frame) {
  std::vector<double> flat(static_cast<std::size_t>(frame.coords.size()));
  for (Eigen::Index r = 0; r < frame.m(); ++r)
    for (Eigen::Index c = 0; c < frame.n(); ++c) flat[r * frame.n() + c] = frame.coords(r, c);
  return flat;
}
}  // namespace

double lj_energy(const Frame& frame, double a, const OscillatorySpec& osc) {
  frame.validate();
  Potential pot{SystemKind::lj, frame.m(), frame.n(), a, 1.0, osc};
  const auto x = flat_coords(frame);
  return pot.energy<double>(x);
}

double polymer_energy(const Frame& frame, double d_hat, double a, const OscillatorySpec& osc) {
  frame.validate();
  if (frame.m() < 2) throw Error("polymer needs m >= 2");
  Potential pot{SystemKind::polymer, frame.m(), frame.n(), a, d_hat, osc};
  const auto x = flat_coords(frame);
  return pot.energy<double>(x);
}

MinimizeResult minimize(const Frame& frame, const ad::TapeFunction& energy, double lr, int iters,
                        double max_step, const ValueFunction& value) {
  frame.validate();
  const Eigen::Index m = frame.m();
  const Eigen::Index n = frame.n();
  std::vector<double> x = flat_coords(frame);
  std::vector<double> grad(x.size());
  std::vector<double> trial(x.size());
  std::vector<double> trial_grad(x.size());
  std::vector<double> step(x.size());

  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
  };
  auto check = [](double e) {
    if (!std::isfinite(e)) throw Error("minimize: non-finite energy");
    return e;
  };

  MinimizeResult result;
  double e = check(ad::value_and_gradient(energy, x, grad));
  result.energies.push_back(e);
  result.initial_grad_norm = norm(grad);

  for (int it = 0; it < iters; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) {
      double len = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) {
        step[i * n + c] = -lr * grad[i * n + c];
        len += step[i * n + c] * step[i * n + c];
      }
      len = std::sqrt(len);
      if (len > max_step) {
        for (Eigen::Index c = 0; c < n; ++c) step[i * n + c] *= max_step / len;
      }
    }
    bool accepted = false;
    double factor = 1.0;
    for (int halving = 0; halving <= 20; ++halving, factor *= 0.5) {
      for (std::size_t k = 0; k < x.size(); ++k) trial[k] = x[k] + factor * step[k];
      double et;
      try {
        et = value ? value(trial) : ad::value_and_gradient(energy, trial, trial_grad);
      } catch (const GraphError&) {
        continue;
      } catch (const Error&) {
        continue;  // coincident particles in the trial point
      }
      if (!std::isfinite(et)) continue;
      if (et <= e) {
        if (value) et = ad::value_and_gradient(energy, trial, trial_grad);
        x.swap(trial);
        grad.swap(trial_grad);
        e = et;
        accepted = true;
        break;
      }
    }
    result.energies.push_back(e);
    if (!accepted) {
      result.stalled = true;
      // Every later iteration would retry the same steps.
      for (int rest = it + 1; rest < iters; ++rest) result.energies.push_back(e);
      break;
    }
  }

  result.final_grad_norm = norm(grad);
  result.frame = frame;
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < n; ++c) result.frame.coords(r, c) = x[r * n + c];
  result.frame.energy = e;
  return result;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

Frame initial_frame(Eigen::Index m, Eigen::Index n, double a, std::uint64_t seed,
                    std::uint64_t index, int attempt) {
  std::mt19937_64 rng(stream_seed(seed, 0x67656e00ULL + std::uint64_t(attempt), index));
  std::normal_distribution<double> normal(0.0, 1.0);
  Frame f;
  f.coords.resize(m, n);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < n; ++c) f.coords(r, c) = normal(rng);
  f.types.assign(std::size_t(m), 0);
  if (m < 2) return f;
  double mean_nn = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i != j) best = std::min(best, (f.coords.row(i) - f.coords.row(j)).norm());
    }
    mean_nn += best;
  }
  mean_nn /= double(m);
  if (mean_nn > 0.0) f.coords *= a / mean_nn;
  return f;
}

namespace {
Frame generate_one(SystemKind kind, const GenConfig& config, const OscillatorySpec& osc,
                   std::uint64_t index) {
  Potential pot{kind, config.m, config.n, config.lj_a, config.bond_target, osc};
  const ad::TapeFunction energy = pot.tape_function();
  std::string last_error;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const Frame start = initial_frame(config.m, config.n, config.lj_a, config.seed, index, attempt);
    try {
      MinimizeResult r = minimize(start, energy, config.em_lr, config.em_iters, 0.1 * config.lj_a,
                                  [&pot](std::span<const double> x) { return pot.energy<double>(x); });
      // A start with overlapping particles sits where the oscillatory term
      // makes the gradient meaningless; descent stalls there far from any
      // stationary point.
      if (r.stalled && r.final_grad_norm > 1.0 / config.lj_a) {
        last_error = "minimization stalled";
        continue;
      }
      return r.frame;
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw Error("generate: frame " + std::to_string(index) + " failed 10 times: " + last_error);
}
}  // namespace

std::vector<Frame> generate(SystemKind kind, const GenConfig& config, const OscillatorySpec& osc) {
  config.validate();
  std::vector<Frame> frames(config.num_samples);
  if (config.num_samples == 0) return frames;
  const auto workers = std::min<std::size_t>(std::size_t(config.threads), config.num_samples);
  if (workers <= 1) {
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = generate_one(kind, config, osc, i);
    return frames;
  }
  std::vector<std::thread> pool;
  std::vector<std::string> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < frames.size(); i += workers) {
          frames[i] = generate_one(kind, config, osc, i);
        }
      } catch (const std::exception& e) {
        errors[w] = e.what();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(e);
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Frames file

namespace {
std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_frames(const Dataset& dataset, std::ostream& out) {
  out << dataset.m << ' ' << dataset.n << '\n';
  for (std::size_t f = 0; f < dataset.frames.size(); ++f) {
    const Frame& frame = dataset.frames[f];
    if (frame.m() != dataset.m || frame.n() != dataset.n) {
      throw DimensionError("frame " + std::to_string(f) + " does not match the dataset shape");
    }
    out << "E " << fmt_double(frame.energy.value_or(std::numeric_limits<double>::quiet_NaN()))
        << '\n';
    for (Eigen::Index r = 0; r < frame.m(); ++r) {
      out << (frame.has_types() ? frame.types[std::size_t(r)] : 0);
      for (Eigen::Index c = 0; c < frame.n(); ++c) out << ' ' << fmt_double(frame.coords(r, c));
      out << '\n';
    }
  }
}

void save_frames(const Dataset& dataset, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    write_frames(dataset, out);
    if (!out) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot rename " + tmp);
}

namespace {

std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_real(std::string_view tok, long line, const std::string& what) {
  if (tok == "nan" || tok == "NaN" || tok == "NAN") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(what + ": '" + std::string(tok) + "' is not a number", line);
  }
  return v;
}

long parse_int(std::string_view tok, long line, const std::string& what) {
  long v = 0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(what + ": '" + std::string(tok) + "' is not an integer", line);
  }
  return v;
}

}  // namespace

Dataset read_frames(std::istream& in) {
  Dataset ds;
  std::string raw;
  long line_no = 0;
  bool have_header = false;
  Frame* current = nullptr;
  Eigen::Index rows_read = 0;
  long frame_line = 0;

  auto finish_frame = [&]() {
    if (current != nullptr && rows_read != ds.m) {
      throw ParseError("frame " + std::to_string(ds.frames.size() - 1) + ": expected " +
                           std::to_string(ds.m) + " atom rows, found " + std::to_string(rows_read),
                       frame_line);
    }
  };

  while (std::getline(in, raw)) {
    ++line_no;
    const auto toks = tokens(raw);
    if (toks.empty() || toks[0].front() == '#') continue;

    if (!have_header) {
      if (toks.size() != 2) throw ParseError("header must be 'm n'", line_no);
      ds.m = parse_int(toks[0], line_no, "header m");
      ds.n = parse_int(toks[1], line_no, "header n");
      if (ds.m < 1 || ds.n < 1) throw ParseError("header needs m >= 1 and n >= 1", line_no);
      have_header = true;
      continue;
    }

    if (toks[0] == "E") {
      finish_frame();
      if (toks.size() != 2) throw ParseError("energy line must be 'E <value>'", line_no);
      ds.frames.emplace_back();
      current = &ds.frames.back();
      const double e = parse_real(toks[1], line_no, "energy");
      if (!std::isnan(e)) current->energy = e;
      current->coords.resize(ds.m, ds.n);
      current->types.assign(std::size_t(ds.m), 0);
      rows_read = 0;
      frame_line = line_no;
      continue;
    }

    if (current == nullptr) throw ParseError("atom row before the first 'E' line", line_no);
    const std::size_t frame_index = ds.frames.size() - 1;
    if (rows_read >= ds.m) {
      throw ParseError("frame " + std::to_string(frame_index) + ": more than " +
                           std::to_string(ds.m) + " atom rows",
                       line_no);
    }
    if (Eigen::Index(toks.size()) != ds.n + 1) {
      throw ParseError("frame " + std::to_string(frame_index) + ": atom row needs 1 type and " +
                           std::to_string(ds.n) + " coordinates, found " +
                           std::to_string(toks.size()) + " fields",
                       line_no);
    }
    current->types[std::size_t(rows_read)] = int(parse_int(toks[0], line_no, "type"));
    for (Eigen::Index c = 0; c < ds.n; ++c) {
      const double v = parse_real(toks[std::size_t(c + 1)], line_no, "coordinate");
      if (!std::isfinite(v)) {
        throw ParseError("frame " + std::to_string(frame_index) + ": non-finite coordinate",
                         line_no);
      }
      current->coords(rows_read, c) = v;
    }
    ++rows_read;
  }
  finish_frame();
  if (!have_header) ds.warnings.push_back("empty frames file");
  return ds;
}

Dataset load_frames(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  return read_frames(in);
}

std::vector<std::size_t> seeded_permutation(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

SplitKind parse_split_kind(const std::string& s) {
  if (s == "80/20" || s == "80-20" || s == "ratio") return SplitKind::ratio_80_20;
  if (s == "md") return SplitKind::md;
  throw Error("unknown split '" + s + "' (expected 80/20 or md)");
}

std::string to_string(SplitKind kind) { return kind == SplitKind::md ? "md" : "80/20"; }

Split make_split(std::size_t count, SplitKind kind, std::uint64_t seed) {
  const auto perm = seeded_permutation(count, seed);
  Split split;
  std::size_t n_train = 0, n_test = 0;
  if (kind == SplitKind::ratio_80_20) {
    n_train = count * 8 / 10;
    n_test = count - n_train;
  } else {
    if (count < 8200) {
      throw Error("md split needs at least 8200 frames, dataset has " + std::to_string(count));
    }
    n_train = 8000;
    n_test = 200;
  }
  split.train.assign(perm.begin(), perm.begin() + std::ptrdiff_t(n_train));
  split.test.assign(perm.begin() + std::ptrdiff_t(n_train),
                    perm.begin() + std::ptrdiff_t(n_train + n_test));
  return split;
}

}  // namespace gksn
