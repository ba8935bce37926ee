#include "gksn/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include "gksn/datasets.hpp"
#include "gksn/training.hpp"
#include "gksn/verify.hpp"

#ifndef GKSN_VERSION
#define GKSN_VERSION "dev"
#endif

namespace gksn::cli {

using nlohmann::json;

bool parse_switch(const std::string& s) {
  if (s == "on" || s == "true" || s == "T" || s == "1" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "F" || s == "0" || s == "no") return false;
  throw Error("expected on/off, got '" + s + "'");
}

std::string model_name(ModelKind kind, bool perm, const FeatureConfig& config,
                       const Metric& metric) {
  std::string name = perm ? "π " : "";
  name += metric.kind() == MetricKind::minkowski ? "O(1,n-1) " : "O(n) ";
  name += kind == ModelKind::kan ? "KAN" : "MLP";
  return name + config.flag_string();
}

void write_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out << text;
    if (!out) throw Error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot rename " + tmp);
}

std::uint64_t sub_seed(std::uint64_t seed, SeedStream stream) {
  return stream_seed(seed, 0x5eed0000ULL + static_cast<unsigned>(stream), 0);
}

namespace {

using Clock = std::chrono::steady_clock;

void write_manifest(const std::string& output, const std::string& command, const json& config,
                    std::uint64_t seed, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, Clock::time_point start) {
  json m = {{"command", command},
            {"config", config},
            {"seed", seed},
            {"version", GKSN_VERSION},
            {"inputs", inputs},
            {"outputs", outputs},
            {"wall_seconds", std::chrono::duration<double>(Clock::now() - start).count()}};
  write_atomic(output + ".manifest.json", m.dump(2) + "\n");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 1) throw Error("bad width '" + tok + "' in '" + s + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<Frame> select(const std::vector<Frame>& frames, const std::vector<std::size_t>& idx) {
  std::vector<Frame> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(frames[i]);
  return out;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string kind = "lj";
  long m = 4, n = 3;
  std::size_t samples = 10000;
  std::uint64_t seed = 42;
  std::string osc = "default";
  double em_lr = 0.01;
  int em_iters = 500;
  double a = 1.0;
  double dhat = 1.0;
  int threads = 1;
  std::string out;
};

int cmd_gen(const GenArgs& g, std::ostream& out) {
  const auto start = Clock::now();
  GenConfig cfg;
  cfg.m = g.m;
  cfg.n = g.n;
  cfg.num_samples = g.samples;
  cfg.seed = sub_seed(g.seed, SeedStream::generation);
  cfg.em_lr = g.em_lr;
  cfg.em_iters = g.em_iters;
  cfg.lj_a = g.a;
  cfg.bond_target = g.dhat;
  cfg.threads = g.threads;
  const SystemKind kind = parse_system_kind(g.kind);
  const OscillatorySpec osc = OscillatorySpec::parse(g.osc);

  Dataset ds;
  ds.m = cfg.m;
  ds.n = cfg.n;
  ds.frames = generate(kind, cfg, osc);
  save_frames(ds, g.out);

  const json config = {{"kind", g.kind},   {"m", g.m},         {"n", g.n},
                       {"samples", g.samples}, {"osc", g.osc},   {"em_lr", g.em_lr},
                       {"em_iters", g.em_iters}, {"a", g.a},       {"dhat", g.dhat},
                       {"threads", g.threads}, {"generation_seed", cfg.seed}};
  write_manifest(g.out, "gen", config, g.seed, {}, {g.out}, start);
  out << "wrote " << ds.frames.size() << " frames to " << g.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string model = "kan";
  std::string perm = "off";
  std::string node_index = "off";
  std::string linear = "on";
  std::string features = "n1,n12,inner,outer";
  std::string metric = "euclidean";
  std::string types = "off";
  std::string hidden;
  std::string size = "small";
  int pool_entries = 16;
  int basis = kDefaultBasis;
  int epochs = 1000;
  std::size_t batch = 4092;
  double lr = 1e-3;
  double wd = 1e-9;
  std::uint64_t seed = 1;
  std::string split = "80/20";
  std::string out;
  std::string history;
  bool timing = false;
  int threads = 1;
};

int cmd_train(const TrainArgs& t, std::ostream& out) {
  const auto start = Clock::now();
  const Dataset ds = load_frames(t.data);
  if (ds.frames.empty()) throw Error("no frames in " + t.data);

  FeatureConfig fc;
  fc.node_index = parse_switch(t.node_index);
  fc.linear = parse_switch(t.linear);
  fc.features = FeatureSet::parse(t.features);
  fc.include_types = parse_switch(t.types);
  const Metric metric = Metric::parse(t.metric);
  const ModelKind kind = parse_model_kind(t.model);
  const bool perm = parse_switch(t.perm);
  ModelSpec spec = ModelSpec::defaults(kind, perm);
  // Two hidden layers of 128/256/512 (MLP) or 16/32/64 (KAN) units.
  const int scale = t.size == "large" ? 4 : t.size == "medium" ? 2 : 1;
  for (int& w : spec.hidden) w *= scale;
  if (!t.hidden.empty()) spec.hidden = parse_int_list(t.hidden);
  spec.pool_entries = t.pool_entries;
  spec.basis = t.basis;

  const SplitKind split_kind = parse_split_kind(t.split);
  const std::uint64_t split_seed = sub_seed(t.seed, SeedStream::split);
  const Split split = make_split(ds.frames.size(), split_kind, split_seed);
  const std::vector<Frame> train_set = select(ds.frames, split.train);
  const std::vector<Frame> test_set = select(ds.frames, split.test);

  Model model = Model::build(spec, fc, metric, ds.m, ds.n);
  model.init_params(sub_seed(t.seed, SeedStream::init));
  prepare_model(model, train_set);

  TrainConfig tc;
  tc.epochs = t.epochs;
  tc.batch_size = t.batch;
  tc.lr = t.lr;
  tc.weight_decay = t.wd;
  tc.seed = sub_seed(t.seed, SeedStream::shuffle);
  tc.record_time = t.timing;
  const History hist = train(model, train_set, test_set, tc);

  const std::string name = model_name(kind, perm, fc, metric);
  model.meta()["name"] = name;
  model.meta()["seed"] = std::to_string(t.seed);
  model.meta()["split"] = to_string(split_kind);
  model.meta()["split_seed"] = std::to_string(split_seed);
  model.meta()["n_frames"] = std::to_string(ds.frames.size());
  model.meta()["data"] = t.data;
  save_checkpoint(model, t.out);
  const std::string history_path = t.history.empty() ? t.out + ".history.csv" : t.history;
  hist.save_csv(history_path);

  json config = {{"data", t.data},
                 {"model", t.model},
                 {"perm", perm},
                 {"node_index", fc.node_index},
                 {"linear", fc.linear},
                 {"features", fc.features.to_string()},
                 {"metric", metric.name()},
                 {"types", fc.include_types},
                 {"size", t.size},
                 {"hidden", spec.hidden},
                 {"pool_entries", spec.pool_entries},
                 {"basis", spec.basis},
                 {"epochs", t.epochs},
                 {"batch", t.batch},
                 {"lr", t.lr},
                 {"wd", t.wd},
                 {"split", to_string(split_kind)},
                 {"threads", t.threads},
                 {"timing", t.timing},
                 {"name", name},
                 {"param_count", model.param_count()}};
  write_manifest(t.out, "train", config, t.seed, {t.data}, {t.out, history_path}, start);

  json summary = {{"model", name},
                  {"param_count", model.param_count()},
                  {"n_train", train_set.size()},
                  {"n_test", test_set.size()},
                  {"epochs", hist.epochs.size()}};
  if (!hist.epochs.empty()) {
    summary["final_test_huber"] = hist.epochs.back().test_huber;
    summary["final_test_nll"] = hist.epochs.back().test_nll;
  }
  out << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string subset = "all";
  std::string out;
};

json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

int cmd_eval(const EvalArgs& e, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const Model model = load_checkpoint(e.checkpoint);
  const Dataset ds = load_frames(e.data);
  if (ds.m != model.frame_m() || ds.n != model.frame_n()) {
    throw DimensionError("checkpoint expects " + std::to_string(model.frame_m()) + "x" +
                         std::to_string(model.frame_n()) + " frames, data has " +
                         std::to_string(ds.m) + "x" + std::to_string(ds.n));
  }
  std::vector<Frame> frames;
  if (e.subset == "all") {
    frames = ds.frames;
  } else if (e.subset == "test" || e.subset == "train") {
    const auto& meta = model.meta();
    auto get = [&](const std::string& key) {
      const auto it = meta.find(key);
      if (it == meta.end()) throw Error("checkpoint has no '" + key + "' metadata for --subset");
      return it->second;
    };
    if (std::stoull(get("n_frames")) != ds.frames.size()) {
      throw Error("--subset needs the training data: checkpoint saw " + get("n_frames") +
                  " frames, file has " + std::to_string(ds.frames.size()));
    }
    const Split split =
        make_split(ds.frames.size(), parse_split_kind(get("split")), std::stoull(get("split_seed")));
    frames = select(ds.frames, e.subset == "test" ? split.test : split.train);
  } else {
    throw Error("unknown subset '" + e.subset + "' (expected all, train or test)");
  }

  json warnings = json::array();
  const OutputScaler fitted = fit_scaler(frames);
  const OutputScaler& ckpt = model.scaler();
  const double range = ckpt.max - ckpt.min;
  if (fitted.min < ckpt.min - 0.1 * range || fitted.max > ckpt.max + 0.1 * range) {
    std::ostringstream msg;
    msg.precision(6);
    msg << "scaler mismatch: data energies span [" << fitted.min << ", " << fitted.max
        << "], checkpoint was scaled on [" << ckpt.min << ", " << ckpt.max << "]";
    warnings.push_back(msg.str());
    err << "warning: " << msg.str() << "\n";
  }

  const Evaluation ev = evaluate(model, frames);
  json result = {{"mean_huber", ev.mean_huber},
                 {"nll", number_or_string(ev.nll)},
                 {"n_test", ev.count}};
  if (!warnings.empty()) result["warnings"] = warnings;
  out << result.dump(2) << "\n";
  if (!e.out.empty()) {
    write_atomic(e.out, result.dump(2) + "\n");
    write_manifest(e.out, "eval", {{"subset", e.subset}}, 0, {e.checkpoint, e.data}, {e.out},
                   start);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  bool all = false;
  int seeds = 0;  // 0: 10 for --all, 1 for --check
  std::uint64_t seed = 0;
  std::string check;
  long m = 15, n = 3, k = 5;
  bool negative = false;
  std::string out;
};

const std::vector<std::string> kChecks = {
    "lemma-a14",          "rotation-listing", "feature-invariance", "lorentz-gram",
    "invariance-orthogonal", "invariance-lorentz", "invariance-permutation",
    "force-equivariance", "force-fd",         "gradient-fd",        "batch-gradient"};

std::vector<VerifyReport> single_check(const VerifyArgs& v) {
  std::vector<VerifyReport> reports;
  const int seeds = v.seeds > 0 ? v.seeds : 1;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = v.seed + std::uint64_t(s);
    const FeatureConfig cfg;
    auto model = [&](bool perm, const Metric& metric) {
      return random_model(ModelKind::kan, perm, cfg, metric, v.m, v.n, seed);
    };
    const std::string& c = v.check;
    if (c == "lemma-a14") {
      reports.push_back(verify_lemma_a14(v.m, v.n, v.k, seed));
    } else if (c == "rotation-listing") {
      reports.push_back(verify_rotation_listing(v.m, v.n, seed));
    } else if (c == "feature-invariance") {
      reports.push_back(verify_feature_invariance(cfg, v.m, v.n, 10, seed));
    } else if (c == "lorentz-gram") {
      reports.push_back(verify_lorentz_gram(v.m, v.n, 10, seed));
    } else if (c == "invariance-orthogonal") {
      reports.push_back(verify_model_invariance(model(false, Metric::euclidean()),
                                                SymmetryGroup::orthogonal, 10, seed));
    } else if (c == "invariance-lorentz") {
      reports.push_back(verify_model_invariance(model(false, Metric::minkowski()),
                                                SymmetryGroup::lorentz, 10, seed));
    } else if (c == "invariance-permutation") {
      reports.push_back(verify_model_invariance(model(true, Metric::euclidean()),
                                                SymmetryGroup::permutation, 1, seed));
    } else if (c == "force-equivariance") {
      reports.push_back(verify_force_equivariance(model(false, Metric::euclidean()), 10, seed));
    } else if (c == "force-fd") {
      reports.push_back(verify_force_fd(model(false, Metric::euclidean()), seed));
    } else if (c == "gradient-fd") {
      reports.push_back(verify_gradient(model(false, Metric::euclidean()), seed));
    } else if (c == "batch-gradient") {
      reports.push_back(verify_batch_gradient(model(true, Metric::euclidean()), seed));
    } else {
      std::string known;
      for (const auto& k : kChecks) known += (known.empty() ? "" : ", ") + k;
      throw Error("unknown check '" + c + "' (known: " + known + ")");
    }
  }
  return reports;
}

int cmd_verify(const VerifyArgs& v, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  std::vector<VerifyReport> reports;
  if (v.all) {
    SuiteOptions opt;
    opt.seeds = v.seeds > 0 ? v.seeds : 10;
    opt.base_seed = v.seed;
    opt.negative_controls = true;
    reports = run_suite(opt);
  } else if (!v.check.empty()) {
    reports = single_check(v);
  }
  if (v.negative) {
    auto neg = run_negative_controls(v.seeds > 0 ? std::min(v.seeds, 10) : 10, v.seed);
    if (v.all) neg.clear();  // already part of the suite
    reports.insert(reports.end(), neg.begin(), neg.end());
  }
  if (reports.empty()) throw CLI::ValidationError("verify needs --all, --check or --negative-controls");

  std::size_t unexpected = 0;
  for (const VerifyReport& r : reports) {
    if (!r.as_expected()) {
      ++unexpected;
      err << "unexpected " << (r.pass ? "pass" : "failure") << ": " << r.check << " seed "
          << r.seed << " residual " << r.residual << " tol " << r.tolerance << "\n";
    }
  }
  const std::string text = reports_to_json(reports);
  if (v.out.empty()) {
    out << text << "\n";
  } else {
    write_atomic(v.out, text + "\n");
    write_manifest(v.out, "verify",
                   {{"all", v.all}, {"seeds", v.seeds}, {"check", v.check}, {"m", v.m},
                    {"n", v.n}, {"k", v.k}, {"negative_controls", v.negative}},
                   v.seed, {}, {v.out}, start);
    out << reports.size() << " reports, " << unexpected << " unexpected, written to " << v.out
        << "\n";
  }
  return unexpected == 0 ? 0 : 1;
}

std::string on_off_help(const std::string& what) { return what + " (on/off)"; }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geometric Kolmogorov superposition networks for point-cloud energies", "gksn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", GKSN_VERSION);

  GenArgs g;
  auto* gen = app.add_subcommand("gen", "generate a minimized LJ or polymer dataset");
  gen->add_option("--kind", g.kind, "lj or polymer")->check(CLI::IsMember({"lj", "polymer"}));
  gen->add_option("--m", g.m, "particles per frame")->check(CLI::PositiveNumber);
  gen->add_option("--n", g.n, "spatial dimension")->check(CLI::PositiveNumber);
  gen->add_option("--samples", g.samples, "number of frames");
  gen->add_option("--seed", g.seed, "base seed");
  gen->add_option("--osc", g.osc, "oscillatory perturbation: default or none");
  gen->add_option("--em-lr", g.em_lr, "minimization step size");
  gen->add_option("--em-iters", g.em_iters, "minimization iterations");
  gen->add_option("--a", g.a, "LJ length scale");
  gen->add_option("--dhat", g.dhat, "polymer bond rest length");
  gen->add_option("--threads", g.threads, "worker threads")->envname("GKSN_THREADS");
  gen->add_option("--out", g.out, "output frames file")->required();

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "train a model on a frames file");
  tr->add_option("--data", t.data, "frames file")->required();
  tr->add_option("--model", t.model, "kan or mlp")->check(CLI::IsMember({"kan", "mlp"}));
  tr->add_option("--perm", t.perm, on_off_help("permutation pooling"));
  tr->add_option("--node-index", t.node_index, on_off_help("append node index"));
  tr->add_option("--linear", t.linear, on_off_help("pair against the first n points only"));
  tr->add_option("--features", t.features, "comma list of n1,n12,inner,outer,cos,sin or all");
  tr->add_option("--metric", t.metric, "euclidean or minkowski");
  tr->add_option("--types", t.types, on_off_help("append particle types"));
  tr->add_option("--size", t.size, "width preset: small, medium or large")
      ->check(CLI::IsMember({"small", "medium", "large"}));
  tr->add_option("--hidden", t.hidden, "hidden widths, e.g. 16,16 (overrides --size)");
  tr->add_option("--pool-entries", t.pool_entries, "pooling bank size")->check(CLI::PositiveNumber);
  tr->add_option("--basis", t.basis, "ReLU basis size")->check(CLI::PositiveNumber);
  tr->add_option("--epochs", t.epochs, "training epochs")->check(CLI::NonNegativeNumber);
  tr->add_option("--batch", t.batch, "batch size")->check(CLI::PositiveNumber);
  tr->add_option("--lr", t.lr, "initial learning rate");
  tr->add_option("--wd", t.wd, "AdamW weight decay");
  tr->add_option("--seed", t.seed, "base seed (init, shuffle, split sub-streams)");
  tr->add_option("--split", t.split, "80/20 or md");
  tr->add_option("--out", t.out, "checkpoint path")->required();
  tr->add_option("--history", t.history, "history CSV (default <out>.history.csv)");
  tr->add_flag("--timing", t.timing, "record wall time per epoch in the history");
  tr->add_option("--threads", t.threads, "worker threads")->envname("GKSN_THREADS");

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a frames file");
  ev->add_option("--checkpoint", e.checkpoint, "checkpoint path")->required();
  ev->add_option("--data", e.data, "frames file")->required();
  ev->add_option("--subset", e.subset, "all, train or test (test/train reuse the run's split)");
  ev->add_option("--out", e.out, "also write the metrics JSON here");

  VerifyArgs v;
  auto* vf = app.add_subcommand("verify", "run numerical checks");
  vf->add_flag("--all", v.all, "full suite");
  vf->add_option("--seeds", v.seeds, "seeds per check")->check(CLI::PositiveNumber);
  vf->add_option("--seed", v.seed, "first seed");
  vf->add_option("--check", v.check, "single check name");
  vf->add_option("--m", v.m, "rows")->check(CLI::PositiveNumber);
  vf->add_option("--n", v.n, "dimension")->check(CLI::PositiveNumber);
  vf->add_option("--k", v.k, "rows of Y for lemma-a14")->check(CLI::PositiveNumber);
  vf->add_flag("--negative-controls", v.negative, "run checks that must fail");
  vf->add_option("--out", v.out, "report JSON path (default stdout)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& pe) {
    std::ostringstream o, x;
    const int code = app.exit(pe, o, x);
    out << o.str();
    err << x.str();
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(g, out);
    if (tr->parsed()) return cmd_train(t, out);
    if (ev->parsed()) return cmd_eval(e, out, err);
    if (vf->parsed()) return cmd_verify(v, out, err);
  } catch (const CLI::ValidationError& ve) {
    err << "error: " << ve.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace gksn::cli
