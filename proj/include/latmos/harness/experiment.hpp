#pragma once

// Experiment configs, the symbolic and Door-Key runs, and report emission.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "latmos/automaton.hpp"
#include "latmos/baselines/alergia.hpp"
#include "latmos/baselines/spectral.hpp"
#include "latmos/dataset.hpp"
#include "latmos/doorkey.hpp"
#include "latmos/error.hpp"
#include "latmos/harness/gradcheck_suite.hpp"
#include "latmos/harness/metrics.hpp"
#include "latmos/harness/pca.hpp"
#include "latmos/io.hpp"
#include "latmos/planner.hpp"
#include "latmos/task_model.hpp"

namespace latmos::harness {

enum class ExperimentKind { symbolic_base, symbolic_noisy, symbolic_novel, doorkey_plan, gradcheck };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::symbolic_base: return "symbolic_base";
    case ExperimentKind::symbolic_noisy: return "symbolic_noisy";
    case ExperimentKind::symbolic_novel: return "symbolic_novel";
    case ExperimentKind::doorkey_plan: return "doorkey_plan";
    case ExperimentKind::gradcheck: return "gradcheck";
  }
  return "?";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::symbolic_base, ExperimentKind::symbolic_noisy, ExperimentKind::symbolic_novel,
                 ExperimentKind::doorkey_plan, ExperimentKind::gradcheck})
    if (s == to_string(k)) return k;
  throw ContractViolation("unknown experiment kind: " + s);
}

inline bool is_symbolic(ExperimentKind k) {
  return k == ExperimentKind::symbolic_base || k == ExperimentKind::symbolic_noisy ||
         k == ExperimentKind::symbolic_novel;
}

// One ground-truth automaton: generated from (num_states, seed) unless `dfa` is given.
struct SymbolicTask {
  int num_states = 4;
  std::uint64_t seed = 0;
  std::optional<nlohmann::json> dfa;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::symbolic_base;

  // symbolic
  std::vector<SymbolicTask> tasks = {{4, 1004, {}}, {6, 1006, {}}, {8, 1008, {}}};
  int num_symbols = 4;
  int num_demos = 1000;
  int test_per_class = 500;
  std::vector<std::string> backbones = {"gru", "ssm", "attention"};
  std::vector<double> hidden_factors = {0.5, 1.0, 4.0, 12.0};
  std::vector<double> rank_factors = {0.5, 1.0, 4.0, 12.0};
  bool run_alergia = true;
  bool run_spectral = true;
  bool run_latmos = true;
  double noise_variance = 0.0;
  double holdout_fraction = 0.2;
  double alergia_alpha = 0.05;
  std::string hankel_mode = "frequency";
  double calibration_fraction = 0.2;
  std::string label_mode = "automaton";  // or "synthetic"
  double match_tolerance = 0.0;
  int heads = 2;
  int attention_depth = 1;
  std::uint64_t model_seed = 5;
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 100;
    t.adam.lr = 1e-3;
    t.seed = 6;
    return t;
  }();

  // Door-Key
  int num_configs = 36;
  int grid_size = 8;
  std::uint64_t env_seed = 0;
  std::uint64_t start_seed = 1;
  std::string doorkey_backbone = "gru";
  int doorkey_hidden = 32;
  int frozen_dim = 16;
  int conv_dim = 16;
  std::string negative_sampler = "random_walk";
  std::uint64_t augment_seed = 7;
  std::uint64_t doorkey_model_seed = 3;
  TrainConfig doorkey_train = [] {
    TrainConfig t;
    t.epochs = 100;
    t.adam.lr = 3e-3;
    t.val_fraction = 0.0;
    t.patience = 0;
    t.seed = 4;
    return t;
  }();
  std::vector<double> lambdas = {0.01, 0.05, 0.2};
  double lambda = 0.05;  // headline value
  int budget = 10000;
  int pca_components = 2;

  int threads = 1;
  std::string output_root;  // empty: $LATMOS_OUTPUT_ROOT, else "runs"
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : c.tasks) {
    nlohmann::json j = {{"num_states", t.num_states}, {"seed", t.seed}};
    if (t.dfa) j["dfa"] = *t.dfa;
    tasks.push_back(j);
  }
  return {{"kind", to_string(c.kind)},
          {"tasks", tasks},
          {"num_symbols", c.num_symbols},
          {"num_demos", c.num_demos},
          {"test_per_class", c.test_per_class},
          {"backbones", c.backbones},
          {"hidden_factors", c.hidden_factors},
          {"rank_factors", c.rank_factors},
          {"run_alergia", c.run_alergia},
          {"run_spectral", c.run_spectral},
          {"run_latmos", c.run_latmos},
          {"noise_variance", c.noise_variance},
          {"holdout_fraction", c.holdout_fraction},
          {"alergia_alpha", c.alergia_alpha},
          {"hankel_mode", c.hankel_mode},
          {"calibration_fraction", c.calibration_fraction},
          {"label_mode", c.label_mode},
          {"match_tolerance", c.match_tolerance},
          {"heads", c.heads},
          {"attention_depth", c.attention_depth},
          {"model_seed", c.model_seed},
          {"train", to_json(c.train)},
          {"num_configs", c.num_configs},
          {"grid_size", c.grid_size},
          {"env_seed", c.env_seed},
          {"start_seed", c.start_seed},
          {"doorkey_backbone", c.doorkey_backbone},
          {"doorkey_hidden", c.doorkey_hidden},
          {"frozen_dim", c.frozen_dim},
          {"conv_dim", c.conv_dim},
          {"negative_sampler", c.negative_sampler},
          {"augment_seed", c.augment_seed},
          {"doorkey_model_seed", c.doorkey_model_seed},
          {"doorkey_train", to_json(c.doorkey_train)},
          {"lambdas", c.lambdas},
          {"lambda", c.lambda},
          {"budget", c.budget},
          {"pca_components", c.pca_components},
          {"threads", c.threads},
          {"output_root", c.output_root}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  const nlohmann::json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ContractViolation("experiment config: unknown key '" + it.key() + "'");
  if (j.contains("kind")) c.kind = parse_experiment_kind(j["kind"].get<std::string>());
  if (j.contains("tasks")) {
    c.tasks.clear();
    for (const auto& t : j["tasks"]) {
      SymbolicTask task;
      task.num_states = t.value("num_states", 4);
      task.seed = t.value("seed", std::uint64_t{0});
      if (t.contains("dfa")) task.dfa = t["dfa"];
      c.tasks.push_back(task);
    }
  }
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("num_symbols", c.num_symbols);
  get("num_demos", c.num_demos);
  get("test_per_class", c.test_per_class);
  get("backbones", c.backbones);
  get("hidden_factors", c.hidden_factors);
  get("rank_factors", c.rank_factors);
  get("run_alergia", c.run_alergia);
  get("run_spectral", c.run_spectral);
  get("run_latmos", c.run_latmos);
  get("noise_variance", c.noise_variance);
  get("holdout_fraction", c.holdout_fraction);
  get("alergia_alpha", c.alergia_alpha);
  get("hankel_mode", c.hankel_mode);
  get("calibration_fraction", c.calibration_fraction);
  get("label_mode", c.label_mode);
  get("match_tolerance", c.match_tolerance);
  get("heads", c.heads);
  get("attention_depth", c.attention_depth);
  get("model_seed", c.model_seed);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  get("num_configs", c.num_configs);
  get("grid_size", c.grid_size);
  get("env_seed", c.env_seed);
  get("start_seed", c.start_seed);
  get("doorkey_backbone", c.doorkey_backbone);
  get("doorkey_hidden", c.doorkey_hidden);
  get("frozen_dim", c.frozen_dim);
  get("conv_dim", c.conv_dim);
  get("negative_sampler", c.negative_sampler);
  get("augment_seed", c.augment_seed);
  get("doorkey_model_seed", c.doorkey_model_seed);
  if (j.contains("doorkey_train")) c.doorkey_train = train_config_from_json(j["doorkey_train"]);
  get("lambdas", c.lambdas);
  get("lambda", c.lambda);
  get("budget", c.budget);
  get("pca_components", c.pca_components);
  get("threads", c.threads);
  get("output_root", c.output_root);
  return c;
}

inline void validate(const ExperimentConfig& c) {
  require(c.num_symbols >= 2, "config: num_symbols must be >= 2");
  require(c.num_demos >= 2, "config: num_demos must be >= 2");
  require(c.test_per_class >= 1, "config: test_per_class must be positive");
  require(c.noise_variance >= 0.0, "config: noise_variance must be non-negative");
  require(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0, "config: holdout_fraction must be in (0, 1)");
  require(c.calibration_fraction > 0.0 && c.calibration_fraction < 1.0,
          "config: calibration_fraction must be in (0, 1)");
  require(c.label_mode == "automaton" || c.label_mode == "synthetic", "config: label_mode is automaton|synthetic");
  for (const auto& b : c.backbones) parse_backbone(b);
  for (double f : c.hidden_factors) require(f > 0.0, "config: hidden factors must be positive");
  for (double f : c.rank_factors) require(f > 0.0, "config: rank factors must be positive");
  baselines::parse_hankel_mode(c.hankel_mode);
  require(c.num_configs >= 1, "config: num_configs must be positive");
  require(c.budget >= 1, "config: budget must be positive");
  require(!c.lambdas.empty(), "config: lambdas must be non-empty");
  for (double l : c.lambdas) require(l >= 0.0, "config: lambdas must be non-negative");
  require(c.threads >= 1, "config: threads must be positive");
  doorkey::parse_negative_sampler(c.negative_sampler);
}

// Config fields that determine results; output root and thread count do not.
inline nlohmann::json result_config(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_root");
  j.erase("threads");
  return j;
}

// FNV-1a over the canonical result config text.
inline std::string config_hash(const ExperimentConfig& c) {
  const nlohmann::json j = result_config(c);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string output_root(const ExperimentConfig& c) {
  if (!c.output_root.empty()) return c.output_root;
  if (const char* env = std::getenv("LATMOS_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

inline std::string run_directory(const ExperimentConfig& c) {
  return (std::filesystem::path(output_root(c)) / (std::string(to_string(c.kind)) + "-" + config_hash(c))).string();
}

// ---------------------------------------------------------------------------
// Reports

// One (method, factor, task) cell. ALERGIA has no factor and reports 0.
struct CellResult {
  std::string method;
  double factor = 0.0;
  int task = 0;
  int num_states = 0;
  int size = 0;  // hidden dimension or spectral rank actually used
  bool ok = false;
  Confusion confusion;
  std::int64_t parameters = 0;
  std::vector<std::string> warnings;
  std::string error;
  double seconds = 0.0;  // timing file only
  double accuracy() const { return confusion.accuracy(); }
};

struct PlanRecord {
  int config = 0;
  std::uint64_t config_seed = 0;
  std::string heuristic;
  double lambda = 0.0;
  bool success = false;
  long long explored = 0;
  long long generated = 0;
  int plan_length = 0;
  int optimal_length = 0;
  std::optional<bool> verified;  // model heuristics only
  std::string error;
  double seconds = 0.0;  // timing file only
  double efficiency() const { return static_cast<double>(explored) / static_cast<double>(plan_length); }
};

struct ParityRecord {
  int task = 0;
  double factor = 0.0;
  std::map<std::string, std::int64_t> counts;
  double spread = 0.0;  // max pairwise |a - b| / max(a, b)
  bool ok = true;
};

struct MetricsReport {
  ExperimentKind kind = ExperimentKind::symbolic_base;
  nlohmann::json config;
  std::vector<CellResult> cells;
  std::vector<ParityRecord> parity;
  std::vector<PlanRecord> plans;
  std::vector<std::string> flags;
  nlohmann::json extra = nlohmann::json::object();  // kind-specific details (datasets, models, gradcheck)
  nlohmann::json timing = nlohmann::json::object();
  nlohmann::json traces = nlohmann::json::array();
  std::vector<std::vector<double>> pca_rows;  // config, step, p_accept, pc...

  // Mean and std of accuracy over tasks for one (method, factor); failed cells are skipped.
  Summary accuracy(const std::string& method, double factor) const {
    std::vector<double> v;
    for (const auto& c : cells)
      if (c.ok && c.method == method && c.factor == factor) v.push_back(c.accuracy());
    return summarize(std::move(v));
  }

  // Efficiency distribution of successful plans for one (heuristic, lambda).
  Summary efficiency(const std::string& heuristic, double lambda) const {
    std::vector<double> v;
    for (const auto& p : plans)
      if (p.success && p.heuristic == heuristic && p.lambda == lambda && p.plan_length > 0) v.push_back(p.efficiency());
    return summarize(std::move(v));
  }
};

inline nlohmann::json to_json(const CellResult& c) {
  nlohmann::json j = {{"method", c.method},   {"factor", c.factor},         {"task", c.task},
                      {"num_states", c.num_states}, {"size", c.size},       {"ok", c.ok},
                      {"confusion", to_json(c.confusion)}, {"parameters", c.parameters},
                      {"warnings", c.warnings}, {"error", c.error}};
  j["accuracy"] = c.ok ? nlohmann::json(c.accuracy()) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const PlanRecord& p) {
  nlohmann::json j = {{"config", p.config},          {"config_seed", p.config_seed},
                      {"heuristic", p.heuristic},    {"lambda", p.lambda},
                      {"success", p.success},        {"explored", p.explored},
                      {"generated", p.generated},    {"plan_length", p.plan_length},
                      {"optimal_length", p.optimal_length}, {"error", p.error}};
  j["efficiency"] = p.success && p.plan_length > 0 ? nlohmann::json(p.efficiency()) : nlohmann::json(nullptr);
  j["verified"] = p.verified ? nlohmann::json(*p.verified) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json summary_json(const MetricsReport& r) {
  nlohmann::json out = nlohmann::json::array();
  std::vector<std::pair<std::string, double>> keys;
  for (const auto& c : r.cells) {
    std::pair<std::string, double> k{c.method, c.factor};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& [m, f] : keys) {
    nlohmann::json s = to_json(r.accuracy(m, f));
    s["method"] = m;
    s["factor"] = f;
    out.push_back(s);
  }
  std::vector<std::pair<std::string, double>> hk;
  for (const auto& p : r.plans) {
    std::pair<std::string, double> k{p.heuristic, p.lambda};
    if (std::find(hk.begin(), hk.end(), k) == hk.end()) hk.push_back(k);
  }
  for (const auto& [h, l] : hk) {
    nlohmann::json s = to_json(r.efficiency(h, l));
    s["heuristic"] = h;
    s["lambda"] = l;
    out.push_back(s);
  }
  return out;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json cells = nlohmann::json::array(), plans = nlohmann::json::array(), parity = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  for (const auto& p : r.plans) plans.push_back(to_json(p));
  for (const auto& p : r.parity)
    parity.push_back({{"task", p.task}, {"factor", p.factor}, {"counts", p.counts}, {"spread", p.spread}, {"ok", p.ok}});
  return {{"kind", to_string(r.kind)}, {"config", r.config}, {"cells", cells},   {"plans", plans},
          {"parity", parity},          {"flags", r.flags},   {"summary", summary_json(r)}, {"extra", r.extra}};
}

// Every stored accuracy must equal the ratio of its confusion counts.
inline bool report_integrity(const nlohmann::json& report) {
  for (const auto& c : report.at("cells")) {
    if (c.at("accuracy").is_null()) continue;
    const Confusion conf = confusion_from_json(c.at("confusion"));
    if (conf.total() == 0 || conf.accuracy() != c.at("accuracy").get<double>()) return false;
  }
  return true;
}

namespace detail {

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

inline std::string csv_cells(const MetricsReport& r) {
  std::ostringstream os;
  os << "method,factor,task,num_states,size,ok,accuracy,tp,tn,fp,fn,abstained,parameters\n";
  for (const auto& c : r.cells)
    os << c.method << ',' << fmt(c.factor) << ',' << c.task << ',' << c.num_states << ',' << c.size << ','
       << c.ok << ',' << (c.ok ? fmt(c.accuracy()) : "") << ',' << c.confusion.tp << ',' << c.confusion.tn << ','
       << c.confusion.fp << ',' << c.confusion.fn << ',' << c.confusion.abstained << ',' << c.parameters << '\n';
  return os.str();
}

inline std::string csv_summary(const MetricsReport& r) {
  std::ostringstream os;
  os << "name,param,mean,std,min,max,median,n\n";
  for (const auto& s : summary_json(r)) {
    const bool acc = s.contains("method");
    os << (acc ? s["method"] : s["heuristic"]).get<std::string>() << ','
       << fmt((acc ? s["factor"] : s["lambda"]).get<double>()) << ',' << fmt(s["mean"].get<double>()) << ','
       << fmt(s["std"].get<double>()) << ',' << fmt(s["min"].get<double>()) << ',' << fmt(s["max"].get<double>()) << ','
       << fmt(s["median"].get<double>()) << ',' << s["n"].get<std::size_t>() << '\n';
  }
  return os.str();
}

inline std::string csv_plans(const MetricsReport& r) {
  std::ostringstream os;
  os << "config,config_seed,heuristic,lambda,success,explored,generated,plan_length,optimal_length,efficiency,verified\n";
  for (const auto& p : r.plans)
    os << p.config << ',' << p.config_seed << ',' << p.heuristic << ',' << fmt(p.lambda) << ',' << p.success << ','
       << p.explored << ',' << p.generated << ',' << p.plan_length << ',' << p.optimal_length << ','
       << (p.success && p.plan_length > 0 ? fmt(p.efficiency()) : "") << ','
       << (p.verified ? (*p.verified ? "1" : "0") : "") << '\n';
  return os.str();
}

inline std::string csv_pca(const MetricsReport& r) {
  std::ostringstream os;
  os << "config,step,p_accept";
  if (!r.pca_rows.empty())
    for (std::size_t k = 3; k < r.pca_rows.front().size(); ++k) os << ",pc" << (k - 2);
  os << '\n';
  for (const auto& row : r.pca_rows) {
    for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << fmt(row[k]);
    os << '\n';
  }
  return os.str();
}

}  // namespace detail

// Writes report.json, summary.csv, cells.csv / plans.csv, traces.json,
// latents_pca.csv and timing.json (the only file with wall-clock values).
inline void write_report(const MetricsReport& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto path = [&dir](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  write_file(path("report.json"), to_json(r).dump(2) + "\n");
  write_file(path("summary.csv"), detail::csv_summary(r));
  if (!r.cells.empty()) write_file(path("cells.csv"), detail::csv_cells(r));
  if (!r.plans.empty()) write_file(path("plans.csv"), detail::csv_plans(r));
  if (!r.traces.empty()) write_file(path("traces.json"), r.traces.dump(2) + "\n");
  if (!r.pca_rows.empty()) write_file(path("latents_pca.csv"), detail::csv_pca(r));
  write_file(path("timing.json"), r.timing.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Job execution

// Runs independent jobs on `threads` workers; results keep job order.
inline void run_jobs(std::vector<std::function<void()>>& jobs, int threads) {
  if (threads <= 1 || jobs.size() <= 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) jobs[i]();
    });
  for (auto& th : pool) th.join();
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Max pairwise relative difference of backbone parameter counts.
inline ParityRecord parameter_parity(int obs_dim, int hidden, const std::vector<std::string>& backbones, int heads,
                                     int depth) {
  ParityRecord p;
  for (const auto& b : backbones) {
    ModelConfig mc;
    mc.obs_dim = obs_dim;
    mc.backbone = parse_backbone(b);
    mc.hidden_dim = hidden;
    mc.heads = heads;
    mc.attention_depth = depth;
    p.counts[b] = static_cast<std::int64_t>(LatmosModel(mc).backbone_parameter_count());
  }
  for (const auto& [a, ca] : p.counts)
    for (const auto& [b, cb] : p.counts)
      if (std::max(ca, cb) > 0)
        p.spread = std::max(p.spread, std::abs(static_cast<double>(ca - cb)) / static_cast<double>(std::max(ca, cb)));
  p.ok = p.spread <= 0.2;
  return p;
}

// ---------------------------------------------------------------------------
// Symbolic experiments

struct SymbolicData {
  Dfa dfa;
  std::optional<TransitionHoldout> holdout;
  std::vector<ObservationSequence> positives;
  LabeledDataset train;
  std::vector<ObservationSequence> test;
  std::vector<bool> test_labels;
  bool degenerate = false;
};

inline SymbolicData build_symbolic_data(const ExperimentConfig& cfg, const SymbolicTask& task) {
  SymbolicData d;
  const int P = ap_dimension(ApEncoding::one_hot, cfg.num_symbols);
  d.dfa = task.dfa ? dfa_from_json(*task.dfa) : generate_random_dfa(task.num_states, cfg.num_symbols, task.seed);
  require(d.dfa.num_symbols() == cfg.num_symbols, "symbolic task: DFA alphabet differs from num_symbols");
  const int S = d.dfa.num_states();
  const bool novel = cfg.kind == ExperimentKind::symbolic_novel;
  if (novel) d.holdout = holdout_transitions(d.dfa, cfg.holdout_fraction, derive_seed(task.seed, {0x686f6c64ULL}));
  const TransitionMask* mask = d.holdout ? &d.holdout->train_mask : nullptr;

  const auto walks = sample_positive_walks(d.dfa, cfg.num_demos, S, derive_seed(task.seed, {0x77616c6bULL}), mask);
  Rng noise_rng = make_rng(derive_seed(task.seed, {0x6e6f6973ULL}));
  for (std::size_t i = 0; i < walks.size(); ++i)
    d.positives.push_back(make_positive(
        symbols_to_observations(walks[i].symbols, P, ApEncoding::one_hot, cfg.noise_variance, &noise_rng),
        static_cast<std::int64_t>(i), walks[i].symbols));
  const SuffixSampler sampler = novel ? masked_symbol_sampler(d.dfa, *mask, ApEncoding::one_hot, cfg.noise_variance)
                                      : uniform_symbol_sampler(cfg.num_symbols, ApEncoding::one_hot, cfg.noise_variance);
  d.train = augment_with_negatives(d.positives, sampler, derive_seed(task.seed, {0x61756721ULL}));
  d.train.meta["false_negative_label_rate"] = false_negative_label_rate(d.train, d.dfa);
  if (cfg.label_mode == "automaton") d.train = relabel_with_automaton(std::move(d.train), d.dfa);

  // Balanced ground-truth test set; novel tests must cross a held-out transition.
  Rng test_rng = make_rng(derive_seed(task.seed, {0x74657374ULL}));
  auto crosses = [&](const SymbolWalk& w) { return !novel || walk_uses_blocked(w, d.holdout->train_mask); };
  auto take = [&](bool accepted) {
    try {
      return sample_walks_where(d.dfa, cfg.test_per_class, S, test_rng,
                                [&](const SymbolWalk& w) { return w.accepted == accepted && crosses(w); });
    } catch (const Infeasible&) {
      d.degenerate = true;
      return std::vector<SymbolWalk>{};
    }
  };
  for (bool accepted : {true, false})
    for (const auto& w : take(accepted)) {
      d.test.push_back(make_positive(symbols_to_observations(w.symbols, P, ApEncoding::one_hot),
                                     static_cast<std::int64_t>(d.test.size()), w.symbols));
      d.test_labels.push_back(accepted);
    }
  require(!d.test.empty(), "symbolic task: no test sequences could be sampled");
  return d;
}

inline CellResult run_alergia_cell(const ExperimentConfig& cfg, const SymbolicData& d) {
  CellResult c;
  c.method = "alergia";
  const auto a = baselines::alergia_learn(d.positives, cfg.alergia_alpha, cfg.match_tolerance);
  c.size = a.num_states();
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const auto dec = baselines::alergia_accepts(a, d.test[i]);
    add_decision(c.confusion, d.test_labels[i], dec == baselines::Decision::abstain,
                 dec == baselines::Decision::accept);
  }
  c.ok = true;
  return c;
}

inline CellResult run_spectral_cell(const ExperimentConfig& cfg, const SymbolicData& d, double factor) {
  CellResult c;
  c.method = "spectral";
  c.factor = factor;
  const int S = d.dfa.num_states();
  const std::size_t split =
      static_cast<std::size_t>(std::llround((1.0 - cfg.calibration_fraction) * static_cast<double>(d.positives.size())));
  std::vector<ObservationSequence> train(d.positives.begin(), d.positives.begin() + static_cast<std::ptrdiff_t>(split));
  std::vector<ObservationSequence> cal_pos(d.positives.begin() + static_cast<std::ptrdiff_t>(split), d.positives.end());
  std::vector<ObservationSequence> cal_neg;
  for (const auto& s : d.train.sequences)
    if (s.source == SequenceSource::synthetic_negative && s.source_id >= static_cast<std::int64_t>(split) &&
        s.labels && s.labels->back() == 0)
      cal_neg.push_back(s);
  baselines::SpectralOptions opt;
  opt.mode = baselines::parse_hankel_mode(cfg.hankel_mode);
  const int rank = std::max(1, static_cast<int>(std::lround(factor * S)));
  const auto wa = baselines::spectral_learn(train, rank, cal_pos, cal_neg, opt, cfg.match_tolerance);
  c.size = wa.rank;
  c.warnings = wa.warnings;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const auto dec = baselines::spectral_accepts(wa, d.test[i]);
    add_decision(c.confusion, d.test_labels[i], dec == baselines::Decision::abstain,
                 dec == baselines::Decision::accept);
  }
  c.ok = true;
  return c;
}

inline CellResult run_latmos_cell(const ExperimentConfig& cfg, const SymbolicData& d, const std::string& backbone,
                                  double factor, const std::string& checkpoint = "") {
  CellResult c;
  c.method = "latmos_" + backbone;
  c.factor = factor;
  ModelConfig mc;
  mc.obs_dim = d.train.obs_dim;
  mc.backbone = parse_backbone(backbone);
  mc.hidden_dim = hidden_dim_for_factor(factor, d.dfa.num_states());
  mc.heads = cfg.heads;
  mc.attention_depth = cfg.attention_depth;
  mc.seed = cfg.model_seed;
  LatmosModel m(mc);
  train(m, d.train, cfg.train);
  c.size = mc.hidden_dim;
  c.parameters = static_cast<std::int64_t>(m.backbone_parameter_count());
  const auto p = final_accept_probs(m, d.test);
  for (std::size_t i = 0; i < d.test.size(); ++i) add_decision(c.confusion, d.test_labels[i], false, p[i] >= 0.5);
  c.ok = true;
  if (!checkpoint.empty()) save_model(m, checkpoint);
  return c;
}

// `artifact_dir` (optional) receives datasets, DFAs and checkpoints.
inline MetricsReport run_symbolic_experiment(const ExperimentConfig& cfg, const std::string& artifact_dir = "") {
  require(is_symbolic(cfg.kind), "run_symbolic_experiment: not a symbolic config");
  validate(cfg);
  MetricsReport r;
  r.kind = cfg.kind;
  r.config = result_config(cfg);
  r.extra["tasks"] = nlohmann::json::array();
  r.timing["cells"] = nlohmann::json::array();
  const auto t_all = std::chrono::steady_clock::now();

  for (std::size_t ti = 0; ti < cfg.tasks.size(); ++ti) {
    const int task = static_cast<int>(ti);
    SymbolicData d;
    try {
      d = build_symbolic_data(cfg, cfg.tasks[ti]);
    } catch (const std::exception& e) {
      CellResult c;
      c.method = "data";
      c.task = task;
      c.error = e.what();
      r.cells.push_back(c);
      continue;
    }
    const int S = d.dfa.num_states();
    const LabelCounts lc = count_labels(d.train);
    nlohmann::json info = {{"task", task},
                           {"num_states", S},
                           {"dfa", dfa_to_json(d.dfa)},
                           {"train_sequences", d.train.size()},
                           {"label_ones", lc.ones},
                           {"label_zeros", lc.zeros},
                           {"false_negative_label_rate", d.train.meta.value("false_negative_label_rate", 0.0)},
                           {"test_sequences", d.test.size()},
                           {"degenerate", d.degenerate}};
    if (d.holdout) {
      nlohmann::json held = nlohmann::json::array();
      for (auto [s, a] : d.holdout->test_only) held.push_back({s, a});
      info["held_out_transitions"] = held;
    }
    r.extra["tasks"].push_back(info);
    if (d.degenerate)
      r.flags.push_back("task " + std::to_string(task) +
                        ": degenerate, one test class cannot be sampled; accuracy is over the other class only");
    if (lc.zeros == 0) r.flags.push_back("task " + std::to_string(task) + ": training labels contain no failures");
    if (!artifact_dir.empty()) {
      const auto base = std::filesystem::path(artifact_dir) / ("task" + std::to_string(task));
      std::filesystem::create_directories(base);
      save_dfa(d.dfa, (base / "dfa.json").string());
      save_dataset(d.train, (base / "train.bin").string());
    }

    if (cfg.run_latmos)
      for (double f : cfg.hidden_factors) {
        ParityRecord p = parameter_parity(d.train.obs_dim, hidden_dim_for_factor(f, S), cfg.backbones, cfg.heads,
                                          cfg.attention_depth);
        p.task = task;
        p.factor = f;
        if (!p.ok)
          r.flags.push_back("parameter parity violated at task " + std::to_string(task) + ", factor " +
                            detail::fmt(f) + " (spread " + detail::fmt(p.spread) + ")");
        r.parity.push_back(p);
      }

    std::vector<CellResult> cells;
    std::vector<std::function<void()>> jobs;
    auto add_job = [&](std::function<CellResult()> fn, std::string method, double factor) {
      const std::size_t slot = cells.size();
      CellResult placeholder;
      placeholder.method = std::move(method);
      placeholder.factor = factor;
      cells.push_back(placeholder);
      jobs.push_back([&cells, slot, fn = std::move(fn)] {
        const auto t0 = std::chrono::steady_clock::now();
        CellResult c = cells[slot];
        try {
          c = fn();
        } catch (const std::exception& e) {
          c.ok = false;
          c.error = e.what();
        }
        c.seconds = seconds_since(t0);
        cells[slot] = std::move(c);
      });
    };
    if (cfg.run_alergia) add_job([&] { return run_alergia_cell(cfg, d); }, "alergia", 0.0);
    if (cfg.run_spectral)
      for (double f : cfg.rank_factors) add_job([&, f] { return run_spectral_cell(cfg, d, f); }, "spectral", f);
    if (cfg.run_latmos) {
      for (const auto& b : cfg.backbones)
        for (double f : cfg.hidden_factors) {
          std::string dir;
          if (!artifact_dir.empty())
            dir = (std::filesystem::path(artifact_dir) / ("task" + std::to_string(task))).string();
          const std::string ckpt = dir.empty() ? "" : dir + "/latmos_" + b + "_" + detail::fmt(f) + ".ckpt";
          add_job([&, b, f, ckpt] { return run_latmos_cell(cfg, d, b, f, ckpt); }, "latmos_" + b, f);
        }
    }
    run_jobs(jobs, cfg.threads);
    for (auto& c : cells) {
      c.task = task;
      c.num_states = S;
      r.timing["cells"].push_back(
          {{"task", task}, {"method", c.method}, {"factor", c.factor}, {"seconds", c.seconds}});
      r.cells.push_back(std::move(c));
    }
  }
  r.timing["total_seconds"] = seconds_since(t_all);
  return r;
}

// ---------------------------------------------------------------------------
// Door-Key planning experiment

inline ModelConfig doorkey_model_config(const ExperimentConfig& cfg, const doorkey::GridConfig& env,
                                        doorkey::ObsVariant v) {
  ModelConfig mc;
  mc.obs_dim = doorkey::obs_dim(env, v);
  mc.backbone = parse_backbone(cfg.doorkey_backbone);
  mc.hidden_dim = cfg.doorkey_hidden;
  mc.heads = cfg.heads;
  mc.attention_depth = cfg.attention_depth;
  mc.seed = cfg.doorkey_model_seed;
  if (v == doorkey::ObsVariant::v) {
    // Frozen generic features concatenated with the trainable grid encoder.
    mc.encoder.frozen = true;
    mc.encoder.frozen_dim = cfg.frozen_dim;
    mc.encoder.conv = true;
    mc.encoder.grid_channels = doorkey::kObsVChannels;
    mc.encoder.grid_height = env.size;
    mc.encoder.grid_width = env.size;
    mc.encoder.conv_dim = cfg.conv_dim;
  }
  return mc;
}

inline std::vector<doorkey::GridConfig> doorkey_configs(const ExperimentConfig& cfg) {
  std::vector<doorkey::GridConfig> out;
  for (int i = 0; i < cfg.num_configs; ++i)
    out.push_back(doorkey::generate_env(cfg.env_seed + static_cast<std::uint64_t>(i), cfg.grid_size));
  return out;
}

// Trains the model for one observation variant on one demonstration per config.
inline LatmosModel train_doorkey_model(const ExperimentConfig& cfg, const std::vector<doorkey::GridConfig>& envs,
                                       doorkey::ObsVariant v, TrainReport* report = nullptr) {
  const auto ds = doorkey::demonstration_dataset(envs, v, cfg.augment_seed,
                                                 doorkey::parse_negative_sampler(cfg.negative_sampler));
  LatmosModel m(doorkey_model_config(cfg, envs.front(), v));
  TrainReport rep = train(m, ds, cfg.doorkey_train);
  if (report) *report = std::move(rep);
  return m;
}

inline MetricsReport run_doorkey_experiment(const ExperimentConfig& cfg, const std::string& artifact_dir = "") {
  require(cfg.kind == ExperimentKind::doorkey_plan, "run_doorkey_experiment: not a doorkey config");
  validate(cfg);
  using namespace planner;
  MetricsReport r;
  r.kind = cfg.kind;
  r.config = result_config(cfg);
  const auto t_all = std::chrono::steady_clock::now();
  const auto envs = doorkey_configs(cfg);

  std::map<doorkey::ObsVariant, LatmosModel> models;
  r.extra["models"] = nlohmann::json::object();
  for (auto v : {doorkey::ObsVariant::x, doorkey::ObsVariant::v}) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainReport rep;
    LatmosModel m = train_doorkey_model(cfg, envs, v, &rep);
    r.timing["train_" + std::string(doorkey::to_string(v))] = seconds_since(t0);
    r.extra["models"][doorkey::to_string(v)] = {{"config", to_json(m.config())},
                                                 {"parameters", m.params().count()},
                                                 {"final_train_accuracy", rep.epochs.back().train_accuracy},
                                                 {"final_train_loss", rep.epochs.back().train_loss}};
    if (!artifact_dir.empty()) {
      std::filesystem::create_directories(artifact_dir);
      save_model(m, artifact_dir + "/latmos_" + doorkey::to_string(v) + ".ckpt");
    }
    models.emplace(v, std::move(m));
  }

  std::vector<double> lambdas = cfg.lambdas;
  if (std::find(lambdas.begin(), lambdas.end(), cfg.lambda) == lambdas.end()) lambdas.push_back(cfg.lambda);
  const std::vector<Heuristic> heuristics = {Heuristic::latmos_x, Heuristic::latmos_v, Heuristic::dijkstra,
                                             Heuristic::o_l2};
  std::vector<doorkey::GridConfig> held;
  std::vector<int> optimal;
  for (std::size_t i = 0; i < envs.size(); ++i) {
    held.push_back(doorkey::with_fresh_start(envs[i], derive_seed(cfg.start_seed, {i})));
    optimal.push_back(static_cast<int>(doorkey::expert_solve(held.back()).actions.size()));
  }

  struct Slot {
    PlanRecord rec;
    PlanResult res;
  };
  std::vector<Slot> slots;
  std::vector<std::function<void()>> jobs;
  for (double lambda : lambdas)
    for (Heuristic h : heuristics)
      for (std::size_t i = 0; i < held.size(); ++i) {
        Slot s;
        s.rec.config = static_cast<int>(i);
        s.rec.config_seed = held[i].seed;
        s.rec.heuristic = to_string(h);
        s.rec.lambda = lambda;
        s.rec.optimal_length = optimal[i];
        slots.push_back(s);
      }
  for (std::size_t k = 0; k < slots.size(); ++k)
    jobs.push_back([&, k] {
      Slot& s = slots[k];
      const auto& env = held[static_cast<std::size_t>(s.rec.config)];
      const Heuristic h = parse_heuristic(s.rec.heuristic);
      const LatmosModel* m = uses_model(h) ? &models.at(variant_of(h)) : nullptr;
      PlannerOptions po;
      po.lambda = s.rec.lambda;
      po.budget = cfg.budget;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        s.res = astar_plan(env, m, h, po);
        s.rec.success = s.res.success;
        s.rec.explored = s.res.explored;
        s.rec.generated = s.res.generated;
        s.rec.plan_length = s.res.plan_length;
        if (m && s.res.success) s.rec.verified = verify_plan(env, *m, s.res).verified();
      } catch (const std::exception& e) {
        s.rec.error = e.what();
      }
      s.rec.seconds = seconds_since(t0);
    });
  run_jobs(jobs, cfg.threads);

  bool dijkstra_optimal = true;
  std::vector<Eigen::VectorXd> latents;
  std::vector<std::pair<int, int>> latent_ids;
  std::vector<double> latent_p;
  r.timing["plans"] = nlohmann::json::array();
  for (auto& s : slots) {
    if (s.rec.heuristic == "dijkstra" && (!s.rec.success || s.rec.plan_length != s.rec.optimal_length))
      dijkstra_optimal = false;
    if (s.res.success || !s.rec.error.empty()) {
      nlohmann::json t = s.res.success ? to_json(s.res, held[static_cast<std::size_t>(s.rec.config)])
                                       : nlohmann::json{{"error", s.rec.error}};
      t["config"] = s.rec.config;
      r.traces.push_back(t);
    }
    if (s.res.success && s.rec.heuristic == "latmos_v" && s.rec.lambda == cfg.lambda) {
      const auto& m = models.at(doorkey::ObsVariant::v);
      ObservationSequence seq;
      seq.steps = s.res.observations;
      const auto probs = m.forward_sequence(seq);
      for (std::size_t t = 0; t < s.res.latents.size(); ++t) {
        latents.push_back(s.res.latents[t]);
        latent_ids.emplace_back(s.rec.config, static_cast<int>(t));
        latent_p.push_back(probs[t].accept);
      }
    }
    r.timing["plans"].push_back({{"config", s.rec.config},
                                 {"heuristic", s.rec.heuristic},
                                 {"lambda", s.rec.lambda},
                                 {"seconds", s.rec.seconds}});
    r.plans.push_back(std::move(s.rec));
  }
  if (!dijkstra_optimal) r.flags.push_back("dijkstra returned a plan longer than the BFS optimum");
  r.extra["dijkstra_all_optimal"] = dijkstra_optimal;

  if (!latents.empty()) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(latents.size()), latents.front().size());
    for (std::size_t i = 0; i < latents.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = latents[i].transpose();
    const Pca p = pca(x, cfg.pca_components);
    for (std::size_t i = 0; i < latents.size(); ++i) {
      std::vector<double> row = {static_cast<double>(latent_ids[i].first), static_cast<double>(latent_ids[i].second),
                                 latent_p[i]};
      for (Eigen::Index k = 0; k < p.projection.cols(); ++k) row.push_back(p.projection(static_cast<Eigen::Index>(i), k));
      r.pca_rows.push_back(std::move(row));
    }
    r.extra["pca_explained_variance"] =
        std::vector<double>(p.explained_variance.data(), p.explained_variance.data() + p.explained_variance.size());
  }
  r.timing["total_seconds"] = seconds_since(t_all);
  return r;
}

inline MetricsReport run_gradcheck_experiment(const ExperimentConfig& cfg) {
  MetricsReport r;
  r.kind = ExperimentKind::gradcheck;
  r.config = result_config(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto suite = run_gradcheck_suite();
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : suite.checks)
    checks.push_back({{"name", c.name}, {"rel_error", c.rel_error}, {"entries", c.entries}, {"passed", c.passed}});
  r.extra["checks"] = checks;
  r.extra["passed"] = suite.passed();
  if (!suite.passed()) r.flags.push_back("gradient check failures");
  r.timing["total_seconds"] = seconds_since(t0);
  return r;
}

inline MetricsReport run_experiment(const ExperimentConfig& cfg, const std::string& artifact_dir = "") {
  switch (cfg.kind) {
    case ExperimentKind::doorkey_plan: return run_doorkey_experiment(cfg, artifact_dir);
    case ExperimentKind::gradcheck: return run_gradcheck_experiment(cfg);
    default: return run_symbolic_experiment(cfg, artifact_dir);
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  try {
    return experiment_config_from_json(nlohmann::json::parse(latmos::detail::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

}  // namespace latmos::harness
