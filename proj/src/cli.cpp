#include "cwda/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cwda/errors.hpp"
#include "cwda/gradcheck_suite.hpp"
#include "cwda/trainer.hpp"

#ifndef CWDA_VERSION
#define CWDA_VERSION "0.0.0"
#endif

namespace cwda::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Usage mistakes that CLI11 cannot see (bad config keys, stage lists).
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

fs::path prepare_dir(const std::string& out) {
  fs::path dir = resolve_path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

std::string absolute(const std::string& path) { return fs::absolute(resolve_path(path)).lexically_normal().string(); }

void write_manifest(const fs::path& dir, const std::string& command, const json& options, const std::string& hash,
                    std::uint64_t seed, const std::vector<std::string>& artifacts) {
  json m;
  m["tool"] = "cwda";
  m["version"] = CWDA_VERSION;
  m["command"] = command;
  m["options"] = options;
  m["dataset_hash"] = hash;
  m["seed"] = seed;
  m["artifacts"] = artifacts;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

// ---- serialization of run state ----

json to_json(const ModuleToggles& t) {
  json stages = json::array();
  for (std::size_t r = 0; r < kNumStages; ++r) {
    if (t.sca_stages[r]) stages.push_back(r + 1);
  }
  return {{"sca_stages", stages}, {"cca", t.cca}, {"rdc", t.rdc}};
}

json to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["lr_decay_fraction"] = c.lr_decay_fraction;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["grad_clip"] = c.grad_clip;
  j["lambda_s"] = c.weights.lambda_s;
  j["lambda_c"] = c.weights.lambda_c;
  j["lambda_r"] = c.weights.lambda_r;
  j["grl_lambda"] = c.grl_lambda;
  const json t = to_json(c.toggles);
  j["sca_stages"] = t["sca_stages"];
  j["cca"] = c.toggles.cca;
  j["rdc"] = c.toggles.rdc;
  j["use_decay_matrix"] = c.use_decay_matrix;
  j["oracle"] = c.oracle;
  j["seed"] = c.seed;
  return j;
}

std::array<bool, kNumStages> stages_from(const json& list) {
  std::array<bool, kNumStages> on{};
  for (const auto& v : list) {
    if (!v.is_number_integer() || v.get<int>() < 1 || v.get<int>() > static_cast<int>(kNumStages))
      throw UsageError("SCA stages must be integers in 1..5");
    on[static_cast<std::size_t>(v.get<int>() - 1)] = true;
  }
  return on;
}

void apply_json(TrainConfig& c, const json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "lr_decay_fraction") c.lr_decay_fraction = v.get<double>();
      else if (key == "lr_decay_factor") c.lr_decay_factor = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "lambda_s") c.weights.lambda_s = v.get<double>();
      else if (key == "lambda_c") c.weights.lambda_c = v.get<double>();
      else if (key == "lambda_r") c.weights.lambda_r = v.get<double>();
      else if (key == "grl_lambda") c.grl_lambda = v.get<double>();
      else if (key == "sca_stages") c.toggles.sca_stages = stages_from(v);
      else if (key == "cca") c.toggles.cca = v.get<bool>();
      else if (key == "rdc") c.toggles.rdc = v.get<bool>();
      else if (key == "use_decay_matrix") c.use_decay_matrix = v.get<bool>();
      else if (key == "oracle") c.oracle = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw UsageError("unknown config key '" + key + "'");
    } catch (const json::exception&) {
      throw UsageError("config key '" + key + "' has the wrong type");
    }
  }
}

json to_json(const EvalResult& r) {
  return {{"accuracy", r.accuracy},
          {"class_accuracy", r.class_accuracy},
          {"mean_iou", r.mean_iou},
          {"rpn_cell_accuracy", r.rpn_cell_accuracy},
          {"count", r.count}};
}

json to_json(const LossBreakdown& b) {
  json j;
  j["l_det"] = b.l_det;
  j["l_cls"] = b.l_cls;
  j["l_loc"] = b.l_loc;
  j["l_s"] = b.l_s;
  j["l_s_stage"] = b.l_s_stage;
  j["l_c"] = b.l_c;
  j["l_r"] = b.l_r;
  j["l_total"] = b.l_total;
  return j;
}

json to_json(const RunMetrics& m) {
  json j;
  j["source_val"] = to_json(m.source_val);
  j["target_val"] = to_json(m.target_val);
  j["target_test"] = to_json(m.target_test);
  j["source_val_acc"] = m.source_val_acc();
  j["target_val_acc"] = m.target_val_acc();
  j["target_test_acc"] = m.target_test_acc();
  j["box_iou_mean"] = m.box_iou_mean();
  j["probe_acc"] = m.probe_acc;
  j["final_epoch"] = m.epochs.empty() ? json() : to_json(m.epochs.back());
  return j;
}

const char* kEpochHeader = "epoch,l_det,l_cls,l_loc,l_s,l_s1,l_s2,l_s3,l_s4,l_s5,l_c,l_r,l_total\n";

std::string epoch_row(std::size_t epoch, const LossBreakdown& b) {
  std::string row = std::to_string(epoch + 1);
  for (double v : {b.l_det, b.l_cls, b.l_loc, b.l_s}) row += "," + fmt(v);
  for (double v : b.l_s_stage) row += "," + fmt(v);
  for (double v : {b.l_c, b.l_r, b.l_total}) row += "," + fmt(v);
  return row + "\n";
}

std::string epochs_csv(const RunMetrics& m) {
  std::string csv = kEpochHeader;
  for (std::size_t e = 0; e < m.epochs.size(); ++e) csv += epoch_row(e, m.epochs[e]);
  return csv;
}

// ---- option sets ----

struct GenOptions {
  std::uint64_t seed = 7;
  std::size_t n_source = 2000;
  std::size_t n_target = 2000;
  std::string shift = "fog";
  std::string out = "data";

  json to_json() const {
    return {{"seed", seed}, {"n_source", n_source}, {"n_target", n_target}, {"shift_preset", shift}};
  }
  static GenOptions from(const json& j) {
    GenOptions o;
    o.seed = j.at("seed").get<std::uint64_t>();
    o.n_source = j.at("n_source").get<std::size_t>();
    o.n_target = j.at("n_target").get<std::size_t>();
    o.shift = j.at("shift_preset").get<std::string>();
    return o;
  }
};

// Flags shared by train, ablate and decay-compare. Flag values are layered
// over an optional --config file; the resolved config is what gets stored.
struct TrainFlags {
  std::string data = "data";
  std::string config_file;
  std::string sca_stages;
  bool cca = false;
  bool rdc = false;
  bool no_decay_matrix = false;
  bool oracle = false;
  double lambda_s = 0, lambda_c = 0, lambda_r = 0, grl_lambda = 0, lr = 0, grad_clip = 0;
  std::size_t epochs = 0;
  std::uint64_t seed = 1;
  std::string out;
  std::vector<CLI::Option*> numeric;  // lambda_s .. seed, in declaration order

  void add(CLI::App* app, bool toggles) {
    app->add_option("--data", data, "Dataset directory")->capture_default_str();
    app->add_option("--config", config_file, "JSON file with training settings");
    if (toggles) {
      app->add_option("--sca-stages", sca_stages, "Comma-separated SCA stages, e.g. 1,2,3,4,5");
      app->add_flag("--cca", cca, "Enable channel correlation alignment");
      app->add_flag("--rdc", rdc, "Enable the region domain classifier");
      app->add_flag("--oracle", oracle, "Train on labelled target data");
    }
    app->add_flag("--no-decay-matrix", no_decay_matrix, "Use the plain gram in CCA");
    numeric = {
        app->add_option("--lambda-s", lambda_s, "SCA loss weight"),
        app->add_option("--lambda-c", lambda_c, "CCA loss weight"),
        app->add_option("--lambda-r", lambda_r, "RDC loss weight"),
        app->add_option("--grl-lambda", grl_lambda, "Gradient reversal strength"),
        app->add_option("--lr", lr, "Initial learning rate"),
        app->add_option("--grad-clip", grad_clip, "Gradient norm cap, 0 disables"),
        app->add_option("--epochs", epochs, "Passes over the labelled training split"),
        app->add_option("--seed", seed, "Training seed")->capture_default_str(),
    };
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config_file.empty()) apply_json(c, read_json(resolve_path(config_file)));
    if (!sca_stages.empty()) {
      json list = json::array();
      std::stringstream ss(sca_stages);
      for (std::string item; std::getline(ss, item, ',');) {
        try {
          std::size_t used = 0;
          const int r = std::stoi(item, &used);
          if (used != item.size()) throw std::invalid_argument(item);
          list.push_back(r);
        } catch (const std::exception&) {
          throw UsageError("bad --sca-stages entry '" + item + "'");
        }
      }
      c.toggles.sca_stages = stages_from(list);
    }
    if (cca) c.toggles.cca = true;
    if (rdc) c.toggles.rdc = true;
    if (oracle) c.oracle = true;
    if (no_decay_matrix) c.use_decay_matrix = false;
    if (numeric[0]->count()) c.weights.lambda_s = lambda_s;
    if (numeric[1]->count()) c.weights.lambda_c = lambda_c;
    if (numeric[2]->count()) c.weights.lambda_r = lambda_r;
    if (numeric[3]->count()) c.grl_lambda = grl_lambda;
    if (numeric[4]->count()) c.learning_rate = lr;
    if (numeric[5]->count()) c.grad_clip = grad_clip;
    if (numeric[6]->count()) c.epochs = epochs;
    if (numeric[7]->count() || config_file.empty()) c.seed = seed;
    return c;
  }
};

TrainConfig config_from(const json& j) {
  TrainConfig c;
  apply_json(c, j);
  return c;
}

void log_epoch(std::size_t e, const LossBreakdown& b) {
  std::fprintf(stderr, "  epoch %zu  l_det %.4f  l_s %.4f  l_c %.4f  l_r %.4f  l_total %.4f\n", e + 1, b.l_det, b.l_s,
               b.l_c, b.l_r, b.l_total);
}

// ---- commands ----

int do_gen(const GenOptions& o, const std::string& out) {
  GenerateOptions g;
  g.seed = o.seed;
  g.n_source = o.n_source;
  g.n_target = o.n_target;
  g.shift = DomainShift::preset(o.shift);
  g.shift_name = o.shift;
  const Dataset d = generate(g);
  const fs::path dir = prepare_dir(out);
  save_dataset(d, dir);
  write_manifest(dir, "gen", o.to_json(), d.hash(), o.seed,
                 {"meta.txt", "source_train.bin", "source_val.bin", "source_test.bin", "target_train.bin",
                  "target_val.bin", "target_test.bin"});
  std::cout << d.hash() << "\n";
  return kOk;
}

Dataset load_data(const std::string& data) {
  const fs::path dir = resolve_path(data);
  if (!fs::exists(dir / "meta.txt")) throw UsageError("no dataset at " + dir.string() + " (run gen first)");
  return load_dataset(dir);
}

int do_train(const std::string& data, const TrainConfig& c, const std::string& out) {
  c.validate();
  const Dataset d = load_data(data);
  const fs::path dir = prepare_dir(out);
  std::fprintf(stderr, "train %s on %s\n", toggles_name(c.toggles).c_str(), d.hash().c_str());
  TrainResult r = train(c, d, log_epoch);
  std::fprintf(stderr, "done in %.1fs\n", r.metrics.wall_seconds);

  r.model.save(dir / "checkpoint.txt");
  write_file(dir / "metrics.csv", epochs_csv(r.metrics));
  json s;
  s["command"] = "train";
  s["config"] = to_json(c);
  s["run"] = c.oracle ? "oracle" : toggles_name(c.toggles);
  s["dataset_hash"] = d.hash();
  s["metrics"] = to_json(r.metrics);
  write_file(dir / "summary.json", s.dump(2) + "\n");
  json opts{{"data", absolute(data)}, {"config", to_json(c)}};
  write_manifest(dir, "train", opts, d.hash(), c.seed, {"checkpoint.txt", "metrics.csv", "summary.json"});
  std::cout << "target_test_acc " << fmt(r.metrics.target_test_acc()) << "\nprobe_acc " << fmt(r.metrics.probe_acc)
            << "\n";
  return kOk;
}

int do_ablate(const std::string& data, const TrainConfig& base, const std::string& out) {
  base.validate();
  const Dataset d = load_data(data);
  const fs::path dir = prepare_dir(out);
  std::string csv =
      "group,name,seed,dataset_hash,sca_stages,cca,rdc,source_val_acc,target_val_acc,target_test_acc,"
      "target_test_class_acc,box_iou_mean,probe_acc,l_total\n";
  json rows = json::array();
  auto rows_done = ablation_suite(base, d, [](const AblationRow& row) {
    std::fprintf(stderr, "%-7s %-20s target_test_acc %.3f probe %.3f (%.1fs)\n", row.group.c_str(), row.name.c_str(),
                 row.metrics.target_test_acc(), row.metrics.probe_acc, row.metrics.wall_seconds);
  });
  for (const auto& row : rows_done) {
    std::string stages;
    for (std::size_t r = 0; r < kNumStages; ++r) {
      if (row.toggles.sca_stages[r]) stages += (stages.empty() ? "" : " ") + std::to_string(r + 1);
    }
    const RunMetrics& m = row.metrics;
    const double l_total = m.epochs.empty() ? 0.0 : m.epochs.back().l_total;
    csv += row.group + "," + row.name + "," + std::to_string(row.seed) + "," + row.dataset_hash + "," + stages + "," +
           (row.toggles.cca ? "1" : "0") + "," + (row.toggles.rdc ? "1" : "0") + "," + fmt(m.source_val_acc()) + "," +
           fmt(m.target_val_acc()) + "," + fmt(m.target_test_acc()) + "," + fmt(m.target_test.class_accuracy) + "," +
           fmt(m.box_iou_mean()) + "," + fmt(m.probe_acc) + "," + fmt(l_total) + "\n";
    rows.push_back({{"group", row.group}, {"name", row.name}, {"toggles", to_json(row.toggles)},
                    {"metrics", to_json(m)}});
  }
  write_file(dir / "ablation.csv", csv);
  json s{{"command", "ablate"}, {"config", to_json(base)}, {"dataset_hash", d.hash()}, {"seed", base.seed},
         {"rows", rows}};
  write_file(dir / "summary.json", s.dump(2) + "\n");
  json opts{{"data", absolute(data)}, {"config", to_json(base)}};
  write_manifest(dir, "ablate", opts, d.hash(), base.seed, {"ablation.csv", "summary.json"});
  return kOk;
}

struct EvalOptions {
  std::string checkpoint = "runs/train/checkpoint.txt";
  std::string data = "data";
  std::string split = "test";
  std::string domain = "target";
  std::uint64_t seed = 1;
  std::string out;
};

int do_eval(const EvalOptions& o) {
  const Split split = parse_split(o.split);
  if (o.domain != "source" && o.domain != "target") throw UsageError("--domain must be source or target");
  const DomainLabel domain = o.domain == "target" ? DomainLabel::target() : DomainLabel::source();
  const Dataset d = load_data(o.data);
  DetectorModel model = DetectorModel::load(resolve_path(o.checkpoint));
  const EvalResult r = evaluate(model, d.split(domain, split));
  json j = to_json(r);
  j["domain"] = o.domain;
  j["split"] = o.split;
  j["probe_acc"] = domain_probe(model, d, o.seed);
  j["dataset_hash"] = d.hash();
  std::cout << j.dump(2) << "\n";
  if (!o.out.empty()) {
    const fs::path dir = prepare_dir(o.out);
    write_file(dir / "eval.json", j.dump(2) + "\n");
    json opts{{"checkpoint", absolute(o.checkpoint)}, {"data", absolute(o.data)}, {"split", o.split},
              {"domain", o.domain}, {"seed", o.seed}};
    write_manifest(dir, "eval", opts, d.hash(), o.seed, {"eval.json"});
  }
  return kOk;
}

struct GradcheckOptions {
  std::size_t trials = 100;
  double tol = 1e-4;
  std::uint64_t seed = 1;
  std::string out;
};

int do_gradcheck(const GradcheckOptions& o) {
  SuiteOptions so;
  so.seed = o.seed;
  so.tolerance = o.tol;
  so.trials_per_case = 1;
  so.min_total_trials = o.trials;
  const auto start = std::chrono::steady_clock::now();
  const SuiteReport r = run_gradcheck_suite(so);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json cases = json::array();
  for (const auto& c : r.cases) {
    std::printf("%-4s %-22s trials %-3zu max_rel_err %.3e\n", c.passed ? "ok" : "FAIL", c.name.c_str(), c.trials,
                c.max_rel_error);
    cases.push_back({{"name", c.name}, {"trials", c.trials}, {"max_rel_error", c.max_rel_error}, {"passed", c.passed}});
  }
  json grl = json::array();
  for (const auto& g : r.grl) {
    std::printf("%-4s grl %-18s lambda %-4g max_abs_diff %.3e\n", g.passed ? "ok" : "FAIL", g.head.c_str(), g.lambda,
                g.max_abs_diff);
    grl.push_back({{"head", g.head}, {"lambda", g.lambda}, {"max_abs_diff", g.max_abs_diff}, {"passed", g.passed}});
  }
  std::printf("%s: %zu trials, max relative error %.3e, tolerance %g\n", r.passed ? "PASS" : "FAIL", r.total_trials,
              r.max_rel_error, r.tolerance);
  std::fprintf(stderr, "gradcheck took %.2fs\n", secs);
  if (!o.out.empty()) {
    const fs::path dir = prepare_dir(o.out);
    json j{{"passed", r.passed}, {"total_trials", r.total_trials}, {"max_rel_error", r.max_rel_error},
           {"tolerance", r.tolerance}, {"cases", cases}, {"grl", grl}};
    write_file(dir / "gradcheck.json", j.dump(2) + "\n");
    write_manifest(dir, "gradcheck", {{"trials", o.trials}, {"tol", o.tol}, {"seed", o.seed}}, "", o.seed,
                   {"gradcheck.json"});
  }
  return r.passed ? kOk : kNumerical;
}

// Largest absolute difference per breakdown field between two evaluations
// of the same (model, pair) under different decay settings.
json breakdown_diff(const std::vector<LossBreakdown>& a, const std::vector<LossBreakdown>& b) {
  double det = 0, cls = 0, loc = 0, s = 0, c = 0, r = 0, total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    det = std::max(det, std::abs(a[i].l_det - b[i].l_det));
    cls = std::max(cls, std::abs(a[i].l_cls - b[i].l_cls));
    loc = std::max(loc, std::abs(a[i].l_loc - b[i].l_loc));
    s = std::max(s, std::abs(a[i].l_s - b[i].l_s));
    c = std::max(c, std::abs(a[i].l_c - b[i].l_c));
    r = std::max(r, std::abs(a[i].l_r - b[i].l_r));
    total = std::max(total, std::abs(a[i].l_total - b[i].l_total));
  }
  return {{"l_det", det}, {"l_cls", cls}, {"l_loc", loc}, {"l_s", s}, {"l_c", c}, {"l_r", r}, {"l_total", total},
          {"only_cca_differs", det == 0 && cls == 0 && loc == 0 && s == 0 && r == 0 && c > 0}};
}

std::vector<LossBreakdown> paired_breakdowns(DetectorModel& model, const Dataset& d, TrainConfig c, bool decay) {
  c.use_decay_matrix = decay;
  const auto& src = d.split(DomainLabel::source(), Split::Val);
  const auto& tgt = d.split(DomainLabel::target(), Split::Val);
  const std::size_t n = std::min<std::size_t>({src.size(), tgt.size(), 32});
  NoGradGuard no_grad;
  std::vector<LossBreakdown> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t = tgt[i].image();
    out.push_back(step_objective(model, src[i].image(), src[i].label(), &t, c).breakdown);
  }
  return out;
}

int do_decay_compare(const std::string& data, TrainConfig c, const std::string& out) {
  c.toggles.cca = true;
  c.oracle = false;
  c.validate();
  const Dataset d = load_data(data);
  const fs::path dir = prepare_dir(out);
  TrainConfig with = c, without = c;
  with.use_decay_matrix = true;
  without.use_decay_matrix = false;
  std::fprintf(stderr, "decay-compare %s: with decay matrix\n", toggles_name(c.toggles).c_str());
  TrainResult rw = train(with, d, log_epoch);
  std::fprintf(stderr, "without decay matrix\n");
  TrainResult ro = train(without, d, log_epoch);

  // Same weights and inputs, only the decay switch flipped.
  DetectorModel init(c.backbone, c.seed);
  const json diff_init = breakdown_diff(paired_breakdowns(init, d, c, true), paired_breakdowns(init, d, c, false));
  const json diff_trained =
      breakdown_diff(paired_breakdowns(rw.model, d, c, true), paired_breakdowns(rw.model, d, c, false));

  std::string csv = "variant," + std::string(kEpochHeader);
  for (std::size_t e = 0; e < rw.metrics.epochs.size(); ++e) csv += "decay," + epoch_row(e, rw.metrics.epochs[e]);
  for (std::size_t e = 0; e < ro.metrics.epochs.size(); ++e) csv += "no_decay," + epoch_row(e, ro.metrics.epochs[e]);
  write_file(dir / "decay_compare.csv", csv);
  json s{{"command", "decay-compare"},
         {"config", to_json(c)},
         {"dataset_hash", d.hash()},
         {"decay", to_json(rw.metrics)},
         {"no_decay", to_json(ro.metrics)},
         {"breakdown_diff_at_init", diff_init},
         {"breakdown_diff_trained", diff_trained}};
  write_file(dir / "summary.json", s.dump(2) + "\n");
  json opts{{"data", absolute(data)}, {"config", to_json(c)}};
  write_manifest(dir, "decay-compare", opts, d.hash(), c.seed, {"decay_compare.csv", "summary.json"});
  std::cout << "decay target_test_acc " << fmt(rw.metrics.target_test_acc()) << "\n"
            << "no_decay target_test_acc " << fmt(ro.metrics.target_test_acc()) << "\n"
            << "only_cca_differs " << (diff_init["only_cca_differs"].get<bool>() &&
                                               diff_trained["only_cca_differs"].get<bool>()
                                           ? "true"
                                           : "false")
            << "\n";
  return kOk;
}

int do_rerun(const std::string& manifest_path, const std::string& out) {
  const json m = read_json(resolve_path(manifest_path));
  try {
    const std::string command = m.at("command").get<std::string>();
    const json& o = m.at("options");
    if (command == "gen") return do_gen(GenOptions::from(o), out);
    if (command == "train") return do_train(o.at("data"), config_from(o.at("config")), out);
    if (command == "ablate") return do_ablate(o.at("data"), config_from(o.at("config")), out);
    if (command == "decay-compare") return do_decay_compare(o.at("data"), config_from(o.at("config")), out);
    if (command == "eval") {
      EvalOptions e;
      e.checkpoint = o.at("checkpoint");
      e.data = o.at("data");
      e.split = o.at("split");
      e.domain = o.at("domain");
      e.seed = o.at("seed");
      e.out = out;
      return do_eval(e);
    }
    if (command == "gradcheck") {
      GradcheckOptions g;
      g.trials = o.at("trials");
      g.tol = o.at("tol");
      g.seed = o.at("seed");
      g.out = out;
      return do_gradcheck(g);
    }
    throw UsageError("manifest names unknown command '" + command + "'");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace

std::string resolve_path(const std::string& path) {
  const char* root = std::getenv("CWDA_OUTPUT_ROOT");
  if (root == nullptr || *root == '\0' || fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Toy cross-domain detection with stage-wise feature alignment"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CWDA_VERSION);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate the two-domain shape dataset");
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--n-source", gen.n_source, "Source images")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--n-target", gen.n_target, "Target images")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--shift-preset", gen.shift, "fog, strong-fog or none")
      ->capture_default_str()
      ->check(CLI::IsMember({"fog", "strong-fog", "none"}));
  g->add_option("--out", gen.out, "Dataset directory")->capture_default_str();

  TrainFlags train_flags;
  train_flags.out = "runs/train";
  auto* t = app.add_subcommand("train", "Train one configuration");
  train_flags.add(t, true);
  t->add_option("--out", train_flags.out, "Run directory")->capture_default_str();

  TrainFlags ablate_flags;
  ablate_flags.out = "runs/ablate";
  auto* a = app.add_subcommand("ablate", "Module grid and SCA stage grid");
  ablate_flags.add(a, false);
  a->add_option("--out", ablate_flags.out, "Run directory")->capture_default_str();

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->capture_default_str();
  e->add_option("--data", ev.data, "Dataset directory")->capture_default_str();
  e->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  e->add_option("--domain", ev.domain, "source or target")->capture_default_str();
  e->add_option("--seed", ev.seed, "Probe seed")->capture_default_str();
  e->add_option("--out", ev.out, "Also write eval.json and a manifest here");

  GradcheckOptions gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every op and head");
  c->add_option("--trials", gc.trials, "Minimum total trials")->capture_default_str();
  c->add_option("--tol", gc.tol, "Relative error tolerance")->capture_default_str();
  c->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  c->add_option("--out", gc.out, "Also write gradcheck.json and a manifest here");

  TrainFlags decay_flags;
  decay_flags.out = "runs/decay-compare";
  auto* dc = app.add_subcommand("decay-compare", "Train with and without the CCA decay matrix");
  decay_flags.add(dc, true);
  dc->add_option("--out", decay_flags.out, "Run directory")->capture_default_str();

  std::string manifest, rerun_out;
  auto* rr = app.add_subcommand("rerun", "Re-execute a command from its manifest");
  rr->add_option("--manifest", manifest, "manifest.json of a previous run")->required();
  rr->add_option("--out", rerun_out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return do_gen(gen, gen.out);
    if (*t) return do_train(train_flags.data, train_flags.resolve(), train_flags.out);
    if (*a) return do_ablate(ablate_flags.data, ablate_flags.resolve(), ablate_flags.out);
    if (*e) return do_eval(ev);
    if (*c) return do_gradcheck(gc);
    if (*dc) return do_decay_compare(decay_flags.data, decay_flags.resolve(), decay_flags.out);
    if (*rr) return do_rerun(manifest, rerun_out);
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kNumerical;
  } catch (const IoError& err) {
    std::cerr << "io error: " << err.what() << "\n";
    return kIo;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace cwda::cli
