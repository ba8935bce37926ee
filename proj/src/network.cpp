#include "gksn/network.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace gksn {

std::vector<double> uniform_knots(int basis, double lo, double hi) {
  if (basis < 1) throw DimensionError("basis size must be >= 1");
  std::vector<double> knots(static_cast<std::size_t>(basis));
  if (basis == 1) {
    knots[0] = 0.5 * (lo + hi);
    return knots;
  }
  for (int b = 0; b < basis; ++b) knots[b] = lo + (hi - lo) * b / (basis - 1);
  return knots;
}

void UnivariateFunction::validate() const {
  if (knots.empty() || knots.size() != coeffs.size()) {
    throw DimensionError("univariate function needs B >= 1 knots and B coefficients");
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) throw DimensionError("knots must be strictly increasing");
  }
}

double UnivariateFunction::operator()(double x) const {
  double y = slope * x;
  for (std::size_t k = 0; k < knots.size(); ++k) y += coeffs[k] * ad::relu(x - knots[k]);
  return y;
}

double univariate_eval(const UnivariateFunction& f, double x) { return f(x); }

std::string to_string(ModelKind kind) { return kind == ModelKind::kan ? "kan" : "mlp"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "kan") return ModelKind::kan;
  if (s == "mlp") return ModelKind::mlp;
  throw Error("unknown model kind '" + s + "' (expected kan or mlp)");
}

ModelSpec ModelSpec::defaults(ModelKind kind, bool perm) {
  ModelSpec spec;
  spec.kind = kind;
  spec.perm = perm;
  spec.hidden = kind == ModelKind::kan ? std::vector<int>{16, 16} : std::vector<int>{128, 128};
  return spec;
}

void Model::set_input_norm(Standardizer s) {
  if (s.mean.size() != s.inv_std.size() ||
      s.mean.size() != static_cast<std::size_t>(raw_input_width())) {
    throw DimensionError("standardizer width " + std::to_string(s.mean.size()) +
                         " does not match model input width " +
                         std::to_string(raw_input_width()));
  }
  input_norm_ = std::move(s);
}

int Model::raw_input_width() const {
  if (pool_) return pool_->pair_width;
  return widths_.empty() ? 0 : widths_.front();
}

Model Model::build(const ModelSpec& spec, const FeatureConfig& features, const Metric& metric,
                   Eigen::Index m, Eigen::Index n) {
  features.validate(m, n);
  metric.check_dimension(n);
  for (int h : spec.hidden) {
    if (h < 1) throw DimensionError("hidden widths must be >= 1");
  }
  Model model;
  model.kind_ = spec.kind;
  model.features_ = features;
  model.metric_ = metric;
  model.m_ = m;
  model.n_ = n;
  model.knots_ = uniform_knots(spec.basis);
  const std::size_t b1 = model.knots_.size() + 1;

  std::size_t offset = 0;
  int input = features.output_length(m, n);
  if (spec.perm) {
    if (features.node_index) {
      throw Error("permutation pooling cannot use the node index feature");
    }
    if (spec.pool_entries < 1) throw DimensionError("pool needs at least one entry");
    PoolBlock pool;
    pool.pair_width = features.pair_width();
    pool.entries = spec.pool_entries;
    pool.bank = offset;
    offset += std::size_t(pool.pair_width) * b1 * std::size_t(pool.entries);
    pool.end = offset;
    model.pool_ = pool;
    input = pool.entries;
  }

  model.widths_.push_back(input);
  for (int h : spec.hidden) model.widths_.push_back(h);
  model.widths_.push_back(1);

  for (std::size_t i = 0; i + 1 < model.widths_.size(); ++i) {
    const int in = model.widths_[i];
    const int out = model.widths_[i + 1];
    if (spec.kind == ModelKind::kan) {
      GksnBlock blk;
      blk.in = in;
      blk.hidden = out;
      blk.out = out;
      blk.phi = offset;
      offset += std::size_t(in) * b1 * std::size_t(out);
      blk.psi = offset;
      offset += std::size_t(out) * b1 * std::size_t(out);
      blk.w_phi = offset;
      offset += std::size_t(in) * std::size_t(out);
      blk.w_psi = offset;
      offset += std::size_t(out) * std::size_t(out);
      blk.end = offset;
      model.gksn_.push_back(blk);
    } else {
      DenseBlock blk;
      blk.in = in;
      blk.out = out;
      blk.activation = i + 2 < model.widths_.size();
      blk.weight = offset;
      offset += std::size_t(in) * std::size_t(out);
      blk.bias = offset;
      offset += std::size_t(out);
      blk.end = offset;
      model.dense_.push_back(blk);
    }
  }
  model.params_.assign(offset, 0.0);

  const auto width = static_cast<std::size_t>(model.raw_input_width());
  model.input_norm_.mean.assign(width, 0.0);
  model.input_norm_.inv_std.assign(width, 1.0);
  return model;
}

void Model::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t basis_count = knots_.size();
  const std::size_t b1 = basis_count + 1;

  // Univariate function grid: rows (input, basis), columns = functions.
  auto init_grid = [&](std::size_t offset, int inputs, int cols, int fan_in) {
    const double sd = std::sqrt(2.0 / (double(fan_in) * double(basis_count)));
    for (int j = 0; j < inputs; ++j) {
      for (std::size_t b = 0; b < b1; ++b) {
        for (int c = 0; c < cols; ++c) {
          double& p = params_[offset + (std::size_t(j) * b1 + b) * std::size_t(cols) + c];
          p = b == 0 ? 1.0 / double(fan_in) : sd * normal(rng);
        }
      }
    }
  };
  auto init_dense = [&](std::size_t offset, std::size_t count, int fan_in) {
    const double sd = std::sqrt(2.0 / double(fan_in));
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = sd * normal(rng);
  };

  if (pool_) {
    init_grid(pool_->bank, pool_->pair_width, pool_->entries, pool_->pair_width);
  }
  for (const GksnBlock& blk : gksn_) {
    init_grid(blk.phi, blk.in, blk.hidden, blk.in);
    init_grid(blk.psi, blk.hidden, blk.out, blk.hidden);
    init_dense(blk.w_phi, std::size_t(blk.in) * std::size_t(blk.out), blk.in);
    init_dense(blk.w_psi, std::size_t(blk.out) * std::size_t(blk.out), blk.out);
  }
  for (const DenseBlock& blk : dense_) {
    init_dense(blk.weight, std::size_t(blk.in) * std::size_t(blk.out), blk.in);
    for (int o = 0; o < blk.out; ++o) params_[blk.bias + std::size_t(o)] = 0.0;
  }
}

namespace {
UnivariateFunction grid_function(const std::vector<double>& params, const std::vector<double>& knots,
                                 std::size_t offset, int row, int col, int cols) {
  const std::size_t b1 = knots.size() + 1;
  UnivariateFunction f;
  f.knots = knots;
  const std::size_t base = offset + std::size_t(row) * b1 * std::size_t(cols) + std::size_t(col);
  f.slope = params[base];
  for (std::size_t b = 1; b < b1; ++b) f.coeffs.push_back(params[base + b * std::size_t(cols)]);
  return f;
}
}  // namespace

UnivariateFunction Model::phi(std::size_t layer, int j, int k) const {
  const GksnBlock& blk = gksn_.at(layer);
  return grid_function(params_, knots_, blk.phi, j, k, blk.hidden);
}

UnivariateFunction Model::psi(std::size_t layer, int i, int k) const {
  const GksnBlock& blk = gksn_.at(layer);
  return grid_function(params_, knots_, blk.psi, k, i, blk.out);
}

UnivariateFunction Model::bank(int q, int w) const {
  if (!pool_) throw Error("model has no pooling bank");
  return grid_function(params_, knots_, pool_->bank, w, q, pool_->entries);
}

std::size_t param_count(const Model& model) { return model.param_count(); }

PoolBank PoolBank::shared(const std::vector<UnivariateFunction>& bank, int pair_width) {
  PoolBank out;
  out.entries = static_cast<int>(bank.size());
  out.pair_width = pair_width;
  for (const UnivariateFunction& f : bank) {
    for (int w = 0; w < pair_width; ++w) out.functions.push_back(f);
  }
  return out;
}

std::vector<double> pooled_features(const Frame& frame, const PoolBank& bank,
                                    const FeatureConfig& config, const Metric& metric) {
  if (config.node_index) {
    throw Error("pooled_features: node_index breaks permutation invariance");
  }
  frame.validate();
  if (bank.pair_width != config.pair_width() ||
      bank.functions.size() != std::size_t(bank.entries) * std::size_t(bank.pair_width)) {
    throw DimensionError("pool bank shape does not match the per-pair width");
  }
  std::vector<double> flat(static_cast<std::size_t>(frame.coords.size()));
  for (Eigen::Index r = 0; r < frame.m(); ++r)
    for (Eigen::Index c = 0; c < frame.n(); ++c) flat[r * frame.n() + c] = frame.coords(r, c);
  const Features<double> feats = detail::pair_scalars<double>(
      config, metric, frame.m(), frame.n(), true, std::span<const double>(flat), frame.types);
  const std::size_t w_count = static_cast<std::size_t>(bank.pair_width);
  const std::size_t pairs = feats.values.size() / w_count;
  std::vector<double> out;
  for (int q = 0; q < bank.entries; ++q) {
    std::vector<double> terms;
    terms.reserve(pairs);
    for (std::size_t p = 0; p < pairs; ++p) {
      double c = 0.0;
      for (std::size_t w = 0; w < w_count; ++w) {
        c += bank.at(q, int(w))(feats.values[p * w_count + w]);
      }
      terms.push_back(c);
    }
    out.push_back(detail::sorted_sum(terms));
  }
  return out;
}

Eigen::VectorXd gksn_forward(const GksnLayer& layer, const Eigen::VectorXd& z) {
  if (z.size() != layer.in) {
    throw DimensionError("gksn_forward: input has " + std::to_string(z.size()) +
                         " entries, layer expects " + std::to_string(layer.in));
  }
  if (layer.phi.size() != std::size_t(layer.in) * std::size_t(layer.hidden) ||
      layer.psi.size() != std::size_t(layer.out) * std::size_t(layer.hidden) ||
      layer.w_phi.rows() != layer.in || layer.w_phi.cols() != layer.residual ||
      layer.w_psi.rows() != layer.out || layer.w_psi.cols() != layer.residual) {
    throw DimensionError("gksn_forward: inconsistent layer shapes");
  }
  Eigen::VectorXd s = Eigen::VectorXd::Zero(layer.hidden);
  for (int k = 0; k < layer.hidden; ++k) {
    for (int j = 0; j < layer.in; ++j) s(k) += layer.phi[std::size_t(j * layer.hidden + k)](z(j));
  }
  const Eigen::VectorXd r = (layer.w_phi.transpose() * z).cwiseMax(0.0);
  Eigen::VectorXd out = layer.w_psi * r;
  for (int i = 0; i < layer.out; ++i) {
    for (int k = 0; k < layer.hidden; ++k) out(i) += layer.psi[std::size_t(i * layer.hidden + k)](s(k));
  }
  return out;
}

GksnLayer extract_layer(const Model& model, std::size_t index) {
  if (model.kind() != ModelKind::kan) throw Error("extract_layer needs a KAN model");
  const GksnBlock& blk = model.gksn_layers().at(index);
  GksnLayer layer;
  layer.in = blk.in;
  layer.hidden = blk.hidden;
  layer.out = blk.out;
  layer.residual = blk.out;
  for (int j = 0; j < blk.in; ++j)
    for (int k = 0; k < blk.hidden; ++k) layer.phi.push_back(model.phi(index, j, k));
  for (int i = 0; i < blk.out; ++i)
    for (int k = 0; k < blk.hidden; ++k) layer.psi.push_back(model.psi(index, i, k));
  const auto p = model.params();
  layer.w_phi.resize(blk.in, blk.out);
  for (int j = 0; j < blk.in; ++j)
    for (int k = 0; k < blk.out; ++k) layer.w_phi(j, k) = p[blk.w_phi + std::size_t(j * blk.out + k)];
  layer.w_psi.resize(blk.out, blk.out);
  for (int i = 0; i < blk.out; ++i)
    for (int k = 0; k < blk.out; ++k) layer.w_psi(i, k) = p[blk.w_psi + std::size_t(i * blk.out + k)];
  return layer;
}

double model_forward(const Model& model, std::span<const double> head_input) {
  if (model.widths().empty()) throw DimensionError("model has no layers");
  if (static_cast<int>(head_input.size()) != model.widths().front()) {
    throw DimensionError("model_forward: input has " + std::to_string(head_input.size()) +
                         " entries, model expects " + std::to_string(model.widths().front()));
  }
  return detail::head_generic<double, double>(model, model.params(), head_input, nullptr);
}

namespace {
std::vector<double> flat_coords(const Frame& frame) {
  std::vector<double> flat(static_cast<std::size_t>(frame.coords.size()));
  for (Eigen::Index r = 0; r < frame.m(); ++r)
    for (Eigen::Index c = 0; c < frame.n(); ++c) flat[r * frame.n() + c] = frame.coords(r, c);
  return flat;
}

void check_frame(const Model& model, const Frame& frame) {
  frame.validate();
  if (frame.m() != model.frame_m() || frame.n() != model.frame_n()) {
    throw DimensionError("model built for " + std::to_string(model.frame_m()) + "x" +
                         std::to_string(model.frame_n()) + " frames, got " +
                         std::to_string(frame.m()) + "x" + std::to_string(frame.n()));
  }
}
}  // namespace

std::vector<double> head_input(const Model& model, const Frame& frame) {
  check_frame(model, frame);
  const auto flat = flat_coords(frame);
  bool degenerate = false;
  return head_input_generic<double, double>(model, model.params(), std::span<const double>(flat),
                                            frame.types, degenerate);
}

double model_energy(const Model& model, const Frame& frame) {
  check_frame(model, frame);
  const auto flat = flat_coords(frame);
  bool degenerate = false;
  return energy_generic<double, double>(model, model.params(), std::span<const double>(flat),
                                        frame.types, degenerate);
}

Eigen::MatrixXd forces(const Model& model, const Frame& frame) {
  check_frame(model, frame);
  ad::Tape tape;
  std::vector<ad::Var> xs;
  xs.reserve(static_cast<std::size_t>(frame.coords.size()));
  for (Eigen::Index r = 0; r < frame.m(); ++r)
    for (Eigen::Index c = 0; c < frame.n(); ++c) xs.push_back(tape.variable(frame.coords(r, c)));
  bool degenerate = false;
  const ad::Var e = energy_generic<ad::Var, double>(model, model.params(),
                                                    std::span<const ad::Var>(xs), frame.types,
                                                    degenerate);
  if (degenerate) throw Error("forces: degenerate cos/sin feature (zero-norm operand)");
  const ad::Gradients g = tape.backward(e);
  Eigen::MatrixXd f(frame.m(), frame.n());
  for (Eigen::Index r = 0; r < frame.m(); ++r)
    for (Eigen::Index c = 0; c < frame.n(); ++c) f(r, c) = -g[xs[r * frame.n() + c]];
  return f;
}

double energy_param_gradient(const Model& model, const Frame& frame, std::span<double> gradient) {
  check_frame(model, frame);
  if (gradient.size() != model.param_count()) throw DimensionError("gradient size mismatch");
  ad::Tape tape;
  std::vector<ad::Var> ps;
  ps.reserve(model.param_count());
  for (double p : model.params()) ps.push_back(tape.variable(p));
  std::vector<ad::Var> xs;
  for (Eigen::Index r = 0; r < frame.m(); ++r)
    for (Eigen::Index c = 0; c < frame.n(); ++c) xs.push_back(tape.constant(frame.coords(r, c)));
  bool degenerate = false;
  const ad::Var e = energy_generic<ad::Var, ad::Var>(model, std::span<const ad::Var>(ps),
                                                     std::span<const ad::Var>(xs), frame.types,
                                                     degenerate);
  const ad::Gradients g = tape.backward(e);
  for (std::size_t i = 0; i < ps.size(); ++i) gradient[i] = g[ps[i]];
  return e.value();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointFormat = "gksn-checkpoint";
constexpr int kCheckpointVersion = 1;

nlohmann::json features_to_json(const FeatureConfig& f) {
  return {{"node_index", f.node_index},
          {"linear", f.linear},
          {"features", f.features.to_string()},
          {"center", f.center},
          {"include_types", f.include_types}};
}

FeatureConfig features_from_json(const nlohmann::json& j) {
  FeatureConfig f;
  f.node_index = j.at("node_index").get<bool>();
  f.linear = j.at("linear").get<bool>();
  f.features = FeatureSet::parse(j.at("features").get<std::string>());
  f.center = j.at("center").get<bool>();
  f.include_types = j.at("include_types").get<bool>();
  return f;
}

nlohmann::json metric_to_json(const Metric& m) {
  nlohmann::json j = {{"kind", m.name()}};
  if (m.kind() == MetricKind::bilinear) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < m.matrix().rows(); ++r) {
      rows.emplace_back();
      for (Eigen::Index c = 0; c < m.matrix().cols(); ++c) rows.back().push_back(m.matrix()(r, c));
    }
    j["matrix"] = rows;
  }
  return j;
}

Metric metric_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "bilinear") return Metric::parse(kind);
  const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd a(Eigen::Index(rows.size()), Eigen::Index(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.size()) throw Error("checkpoint: bilinear matrix is not square");
    for (std::size_t c = 0; c < rows.size(); ++c) a(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
  }
  return Metric::bilinear(a);
}
}  // namespace

std::string save_checkpoint_json(const Model& model) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["kind"] = to_string(model.kind());
  j["frame"] = {{"m", model.frame_m()}, {"n", model.frame_n()}};
  j["widths"] = model.widths();
  j["knots"] = model.knots();
  j["perm"] = model.perm();
  j["pool_entries"] = model.pool() ? model.pool()->entries : 0;
  j["feature_config"] = features_to_json(model.feature_config());
  j["metric"] = metric_to_json(model.metric());
  j["input_norm"] = {{"mean", model.input_norm().mean}, {"inv_std", model.input_norm().inv_std}};
  j["scaler"] = {{"min", model.scaler().min}, {"max", model.scaler().max}};
  j["meta"] = model.meta();
  j["params"] = std::vector<double>(model.params().begin(), model.params().end());
  return j.dump(1);
}

Model load_checkpoint_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw Error("checkpoint: unknown format");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error("checkpoint: unsupported version " + std::to_string(j.at("version").get<int>()));
    }
    ModelSpec spec;
    spec.kind = parse_model_kind(j.at("kind").get<std::string>());
    const auto widths = j.at("widths").get<std::vector<int>>();
    if (widths.size() < 2) throw Error("checkpoint: need at least input and output widths");
    spec.hidden.assign(widths.begin() + 1, widths.end() - 1);
    spec.perm = j.at("perm").get<bool>();
    spec.pool_entries = spec.perm ? j.at("pool_entries").get<int>() : spec.pool_entries;
    const auto knots = j.at("knots").get<std::vector<double>>();
    spec.basis = static_cast<int>(knots.size());
    const FeatureConfig features = features_from_json(j.at("feature_config"));
    const Metric metric = metric_from_json(j.at("metric"));
    Model model = Model::build(spec, features, metric, j.at("frame").at("m").get<Eigen::Index>(),
                               j.at("frame").at("n").get<Eigen::Index>());
    if (model.widths() != widths) throw Error("checkpoint: widths do not match the frame shape");
    model.knots_ = knots;
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != model.params_.size()) {
      throw Error("checkpoint: expected " + std::to_string(model.params_.size()) +
                  " parameters, found " + std::to_string(params.size()));
    }
    model.params_ = std::move(params);
    Standardizer norm;
    norm.mean = j.at("input_norm").at("mean").get<std::vector<double>>();
    norm.inv_std = j.at("input_norm").at("inv_std").get<std::vector<double>>();
    model.set_input_norm(std::move(norm));
    model.scaler_ = {j.at("scaler").at("min").get<double>(), j.at("scaler").at("max").get<double>()};
    model.meta_ = j.at("meta").get<std::map<std::string, std::string>>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out << save_checkpoint_json(model) << '\n';
    if (!out) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot rename " + tmp);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_checkpoint_json(ss.str());
}

}  // namespace gksn
