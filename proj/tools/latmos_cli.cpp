// Command-line front end: data generation, training, evaluation, planning,
// experiments and gradient checks.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latmos/harness/experiment.hpp"

using namespace latmos;
using nlohmann::json;

namespace {

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
      std::filesystem::create_directories(parent);
    write_file(path, text);
  }
}

json read_json(const std::string& path) {
  try {
    return json::parse(latmos::detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
}

std::vector<doorkey::GridConfig> training_envs(int count, int size) {
  std::vector<doorkey::GridConfig> envs;
  for (int i = 0; i < count; ++i) envs.push_back(doorkey::generate_env(static_cast<std::uint64_t>(i), size));
  return envs;
}

// --- gen-dfa ---------------------------------------------------------------

struct GenDfaArgs {
  int states = 4, symbols = 4, accepting = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int gen_dfa(const GenDfaArgs& a) {
  DfaGenOptions opt;
  opt.num_accepting = a.accepting;
  const Dfa d = generate_random_dfa(a.states, a.symbols, a.seed, opt);
  write_or_print(a.out, dfa_to_json(d).dump(2) + "\n");
  return 0;
}

// --- gen-data --------------------------------------------------------------

struct GenDataArgs {
  std::string env = "symbolic";
  std::string dfa;
  int states = 4, symbols = 4, count = 1000, max_len = 0;
  std::uint64_t dfa_seed = 0, seed = 1;
  double noise = 0.0;
  std::string labels = "automaton";
  std::string variant = "x";
  std::string sampler = "random_walk";
  int configs = 36, size = 8;
  std::string format = "binary";
  std::string out;
};

int gen_data(const GenDataArgs& a) {
  const auto format = a.format == "text" ? DatasetFormat::text : DatasetFormat::binary;
  LabeledDataset ds;
  if (a.env == "doorkey") {
    ds = doorkey::demonstration_dataset(training_envs(a.configs, a.size), doorkey::parse_obs_variant(a.variant), a.seed,
                                        doorkey::parse_negative_sampler(a.sampler));
  } else {
    const Dfa d = a.dfa.empty() ? generate_random_dfa(a.states, a.symbols, a.dfa_seed) : load_dfa(a.dfa);
    const int max_len = a.max_len > 0 ? a.max_len : d.num_states();
    const auto walks = sample_positive_walks(d, a.count, max_len, derive_seed(a.seed, {1}));
    Rng noise_rng = make_rng(derive_seed(a.seed, {2}));
    std::vector<ObservationSequence> pos;
    for (std::size_t i = 0; i < walks.size(); ++i)
      pos.push_back(make_positive(symbols_to_observations(walks[i].symbols, d.num_symbols(), ApEncoding::one_hot,
                                                          a.noise, &noise_rng),
                                  static_cast<std::int64_t>(i), walks[i].symbols));
    ds = augment_with_negatives(pos, uniform_symbol_sampler(d.num_symbols(), ApEncoding::one_hot, a.noise),
                                derive_seed(a.seed, {3}));
    if (a.labels == "automaton") ds = relabel_with_automaton(std::move(ds), d);
  }
  require(!a.out.empty(), "gen-data: --out is required");
  save_dataset(ds, a.out, format);
  const auto c = count_labels(ds);
  std::cout << "wrote " << ds.size() << " sequences (" << c.ones << " accept steps, " << c.zeros
            << " fail steps) to " << a.out << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string env;
  std::string variant = "x";
  std::string backbone;
  int hidden = 0;
  int epochs = 0;
  double lr = 0.0;
  std::optional<double> val_fraction;
  std::optional<int> patience;
  std::optional<std::uint64_t> seed, model_seed;
  std::string out;
};

int train_cmd(const TrainArgs& a) {
  require(!a.out.empty(), "train: --out is required");
  // Defaults, then the config file's "model"/"train" objects, then flags.
  ModelConfig mc;
  TrainConfig tc;
  mc.hidden_dim = 16;
  if (!a.config.empty()) {
    const json j = read_json(a.config);
    if (j.contains("train")) tc = train_config_from_json(j["train"]);
    if (j.contains("model")) {
      json m = j["model"];
      if (!m.contains("obs_dim")) m["obs_dim"] = 1;
      mc = model_config_from_json(m);
    }
  }
  LabeledDataset ds;
  if (a.env == "doorkey") {
    const auto v = doorkey::parse_obs_variant(a.variant);
    harness::ExperimentConfig ec;
    const auto envs = training_envs(ec.num_configs, ec.grid_size);
    ds = doorkey::demonstration_dataset(envs, v, ec.augment_seed);
    if (a.config.empty()) {
      ec.doorkey_hidden = a.hidden > 0 ? a.hidden : ec.doorkey_hidden;
      mc = harness::doorkey_model_config(ec, envs.front(), v);
      tc = ec.doorkey_train;
    }
  } else {
    require(!a.data.empty(), "train: --data or --env doorkey is required");
    ds = load_dataset(a.data);
  }
  mc.obs_dim = ds.obs_dim;
  if (!a.backbone.empty()) mc.backbone = parse_backbone(a.backbone);
  if (a.hidden > 0) mc.hidden_dim = a.hidden;
  if (a.model_seed) mc.seed = *a.model_seed;
  if (a.epochs > 0) tc.epochs = a.epochs;
  if (a.lr > 0.0) tc.adam.lr = a.lr;
  if (a.val_fraction) tc.val_fraction = *a.val_fraction;
  if (a.patience) tc.patience = *a.patience;
  if (a.seed) tc.seed = *a.seed;
  LatmosModel m(mc);
  const auto rep = train(m, ds, tc, [](const EpochStats& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " acc " << e.train_accuracy << " val "
              << e.val_accuracy << "\n";
  });
  save_model(m, a.out);
  std::cout << json{{"checkpoint", a.out},
                    {"best_epoch", rep.best_epoch},
                    {"final_train_accuracy", rep.epochs.back().train_accuracy},
                    {"parameters", m.params().count()}}
                   .dump(2)
            << "\n";
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string model, data, trace;
  double threshold = 0.5;
};

int eval_cmd(const EvalArgs& a) {
  if (!a.trace.empty()) {
    const json t = read_json(a.trace);
    doorkey::GridConfig cfg = doorkey::grid_config_from_json(t.at("grid"));
    cfg.agent_start = doorkey::cell_from_json(t.at("start"));
    std::vector<doorkey::Action> actions;
    for (const auto& s : t.at("actions")) actions.push_back(doorkey::parse_action(s.get<std::string>()));
    const auto end = doorkey::replay(cfg, doorkey::initial_state(cfg), actions);
    json out = {{"goal_reached", doorkey::at_goal(cfg, end)}, {"plan_length", actions.size()}};
    bool ok = doorkey::at_goal(cfg, end);
    if (!a.model.empty()) {
      const LatmosModel m = load_model(a.model);
      const auto variant = m.obs_dim() == doorkey::kObsXDim ? doorkey::ObsVariant::x : doorkey::ObsVariant::v;
      const auto v = planner::verify_plan(cfg, m, variant, actions, a.threshold);
      out["model_ok"] = v.model_ok;
      out["disagreement"] = v.disagreement();
      ok = ok && v.model_ok;
    }
    std::cout << out.dump(2) << "\n";
    return ok ? 0 : 1;
  }
  require(!a.model.empty() && !a.data.empty(), "eval: needs --trace, or --model with --data");
  const LatmosModel m = load_model(a.model);
  const LabeledDataset ds = load_dataset(a.data);
  const auto p = final_accept_probs(m, ds.sequences);
  std::vector<bool> pred, lab;
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    require(ds.sequences[i].labels.has_value(), "eval: dataset sequence without labels");
    pred.push_back(p[i] >= a.threshold);
    lab.push_back(ds.sequences[i].labels->back() == 1);
  }
  const auto c = harness::compute_accuracy(pred, lab);
  json out = harness::to_json(c);
  out["accuracy"] = c.accuracy();
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- plan ------------------------------------------------------------------

struct PlanArgs {
  std::uint64_t env_seed = 0;
  int size = 8;
  std::string heuristic = "dijkstra";
  std::string model;
  double lambda = 0.05;
  int budget = 10000;
  std::optional<std::uint64_t> start_seed;
  std::string goal_test = "environment";
  double goal_threshold = 0.9;
  std::string out, latents;
  bool render = false;
};

int plan_cmd(const PlanArgs& a) {
  using namespace planner;
  doorkey::GridConfig cfg = doorkey::generate_env(a.env_seed, a.size);
  if (a.start_seed) cfg = doorkey::with_fresh_start(cfg, *a.start_seed);
  const Heuristic h = parse_heuristic(a.heuristic);
  std::optional<LatmosModel> model;
  if (uses_model(h)) {
    if (!a.model.empty()) {
      model.emplace(load_model(a.model));
    } else {
      std::cerr << "no --model given; training the default " << doorkey::to_string(variant_of(h)) << " model\n";
      harness::ExperimentConfig ec;
      ec.grid_size = a.size;
      model.emplace(harness::train_doorkey_model(ec, harness::doorkey_configs(ec), variant_of(h)));
    }
  }
  PlannerOptions po;
  po.lambda = a.lambda;
  po.budget = a.budget;
  require(a.goal_test == "environment" || a.goal_test == "decoder", "plan: --goal-test is environment|decoder");
  po.goal_test = a.goal_test == "decoder" ? GoalTest::decoder_threshold : GoalTest::environment;
  po.goal_threshold = a.goal_threshold;
  const auto r = astar_plan(cfg, model ? &*model : nullptr, h, po);
  json trace = r.success ? to_json(r, cfg) : json{{"success", false}, {"explored", r.explored}};
  trace["grid"] = doorkey::to_json(cfg);
  if (a.render) std::cerr << doorkey::render(cfg);
  write_or_print(a.out, trace.dump(2) + "\n");
  if (!a.latents.empty()) write_or_print(a.latents, latent_dump(r).dump() + "\n");
  if (!a.out.empty() && a.out != "-")
    std::cout << (r.success ? "plan found: " : "no plan: ") << r.plan_length << " actions, " << r.explored
              << " expansions\n";
  return r.success ? 0 : 1;
}

// --- experiment --------------------------------------------------------------

struct ExperimentArgs {
  std::string config;
  std::string output_root;
  int threads = 0;
  std::vector<std::string> set;
};

int experiment_cmd(const ExperimentArgs& a) {
  json j = read_json(a.config);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, "experiment: --set expects key=value");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      parsed = value;  // bare strings
    }
    j[key] = parsed;
  }
  auto cfg = harness::experiment_config_from_json(j);
  if (!a.output_root.empty()) cfg.output_root = a.output_root;
  if (a.threads > 0) cfg.threads = a.threads;
  harness::validate(cfg);
  const std::string dir = harness::run_directory(cfg);
  std::filesystem::create_directories(dir);
  write_file(dir + "/config.json", harness::to_json(cfg).dump(2) + "\n");
  const auto report = harness::run_experiment(cfg, (std::filesystem::path(dir) / "artifacts").string());
  harness::write_report(report, dir);
  for (const auto& s : harness::summary_json(report)) std::cout << s.dump() << "\n";
  for (const auto& f : report.flags) std::cerr << "flag: " << f << "\n";
  std::size_t failed = 0;
  for (const auto& c : report.cells)
    if (!c.ok) {
      ++failed;
      std::cerr << "cell failed: " << c.method << " task " << c.task << ": " << c.error << "\n";
    }
  std::cout << "report: " << dir << "\n";
  if (report.kind == harness::ExperimentKind::gradcheck && !report.extra.value("passed", false)) return 1;
  return failed == report.cells.size() && !report.cells.empty() ? 1 : 0;
}

// --- gradcheck ---------------------------------------------------------------

int gradcheck_cmd(double tolerance) {
  nn::GradCheckOptions opt;
  opt.tolerance = tolerance;
  const auto suite = harness::run_gradcheck_suite(opt);
  for (const auto& c : suite.checks)
    std::printf("%-48s rel_error %.3e  %s\n", c.name.c_str(), c.rel_error, c.passed ? "ok" : "FAIL");
  std::printf("%s\n", suite.passed() ? "all gradient checks passed" : "gradient check failures");
  return suite.passed() ? 0 : 1;
}

// --- export ------------------------------------------------------------------

struct ExportArgs {
  std::string dataset, model, dfa, latents;
  std::string format = "text";
  int components = 2;
  std::string out;
};

int export_cmd(const ExportArgs& a) {
  if (!a.dataset.empty()) {
    require(!a.out.empty(), "export: --out is required for datasets");
    save_dataset(load_dataset(a.dataset), a.out, a.format == "binary" ? DatasetFormat::binary : DatasetFormat::text);
    return 0;
  }
  if (!a.model.empty()) {
    const LatmosModel m = load_model(a.model);
    write_or_print(a.out, json{{"config", to_json(m.config())},
                               {"parameters", m.params().count()},
                               {"backbone_parameters", m.backbone_parameter_count()}}
                                  .dump(2) +
                              "\n");
    return 0;
  }
  if (!a.dfa.empty()) {
    // Graphviz text for the automaton.
    const Dfa d = load_dfa(a.dfa);
    std::ostringstream os;
    os << "digraph dfa {\n  rankdir=LR;\n  start [shape=point];\n  start -> s" << d.initial() << ";\n";
    for (int s = 0; s < d.num_states(); ++s)
      os << "  s" << s << " [shape=" << (d.is_accepting(s) ? "doublecircle" : "circle") << "];\n";
    for (int s = 0; s < d.num_states(); ++s)
      for (int x = 0; x < d.num_symbols(); ++x) os << "  s" << s << " -> s" << d.next(s, x) << " [label=\"" << x << "\"];\n";
    os << "}\n";
    write_or_print(a.out, os.str());
    return 0;
  }
  if (!a.latents.empty()) {
    // PCA of a latent dump written by `plan --latents`.
    const json rows = read_json(a.latents);
    require(rows.is_array() && !rows.empty(), "export: latent dump is empty");
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < rows[i].size(); ++k)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
    const auto p = harness::pca(x, a.components);
    std::ostringstream os;
    os << "step";
    for (Eigen::Index k = 0; k < p.projection.cols(); ++k) os << ",pc" << (k + 1);
    os << "\n";
    for (Eigen::Index i = 0; i < p.projection.rows(); ++i) {
      os << i;
      for (Eigen::Index k = 0; k < p.projection.cols(); ++k) os << "," << p.projection(i, k);
      os << "\n";
    }
    write_or_print(a.out, os.str());
    return 0;
  }
  throw ContractViolation("export: give one of --dataset, --model, --dfa, --latents");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latmos: latent task models from positive demonstrations"};
  app.require_subcommand(1);

  GenDfaArgs gd;
  auto* c_gd = app.add_subcommand("gen-dfa", "generate a random task automaton");
  c_gd->add_option("--states", gd.states, "number of states")->check(CLI::Range(2, 1000));
  c_gd->add_option("--symbols", gd.symbols, "alphabet size")->check(CLI::Range(2, 64));
  c_gd->add_option("--accepting", gd.accepting, "number of accepting states");
  c_gd->add_option("--seed", gd.seed, "generator seed");
  c_gd->add_option("--out", gd.out, "output file (stdout if omitted)");

  GenDataArgs gdat;
  auto* c_data = app.add_subcommand("gen-data", "build an augmented training dataset");
  c_data->add_option("--env", gdat.env, "symbolic or doorkey")->check(CLI::IsMember({"symbolic", "doorkey"}));
  c_data->add_option("--dfa", gdat.dfa, "automaton file (otherwise generated)");
  c_data->add_option("--states", gdat.states, "states of a generated automaton");
  c_data->add_option("--symbols", gdat.symbols, "alphabet of a generated automaton");
  c_data->add_option("--dfa-seed", gdat.dfa_seed, "seed of a generated automaton");
  c_data->add_option("--count", gdat.count, "positive demonstrations");
  c_data->add_option("--max-len", gdat.max_len, "maximum walk length (default: number of states)");
  c_data->add_option("--seed", gdat.seed, "sampling seed");
  c_data->add_option("--noise", gdat.noise, "observation noise variance");
  c_data->add_option("--labels", gdat.labels, "automaton or synthetic")->check(CLI::IsMember({"automaton", "synthetic"}));
  c_data->add_option("--variant", gdat.variant, "doorkey observation variant x|v");
  c_data->add_option("--sampler", gdat.sampler, "doorkey negative sampler");
  c_data->add_option("--configs", gdat.configs, "doorkey layouts");
  c_data->add_option("--size", gdat.size, "doorkey grid size");
  c_data->add_option("--format", gdat.format, "binary or text")->check(CLI::IsMember({"binary", "text"}));
  c_data->add_option("--out", gdat.out, "output file")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a latent task model");
  c_train->add_option("--config", tr.config, "JSON with optional \"model\" and \"train\" objects");
  c_train->add_option("--data", tr.data, "dataset file");
  c_train->add_option("--env", tr.env, "doorkey: build the Door-Key dataset")->check(CLI::IsMember({"doorkey"}));
  c_train->add_option("--variant", tr.variant, "doorkey observation variant x|v");
  c_train->add_option("--backbone", tr.backbone, "gru, attention or ssm");
  c_train->add_option("--hidden", tr.hidden, "hidden dimension");
  c_train->add_option("--epochs", tr.epochs, "training epochs");
  c_train->add_option("--lr", tr.lr, "Adam learning rate");
  c_train->add_option("--val-fraction", tr.val_fraction, "validation fraction");
  c_train->add_option("--patience", tr.patience, "early-stopping patience (0 disables)");
  c_train->add_option("--seed", tr.seed, "training seed");
  c_train->add_option("--model-seed", tr.model_seed, "initialization seed");
  c_train->add_option("--out", tr.out, "checkpoint file")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a model on a dataset, or replay a plan trace");
  c_eval->add_option("--model", ev.model, "checkpoint");
  c_eval->add_option("--data", ev.data, "dataset file");
  c_eval->add_option("--trace", ev.trace, "plan trace written by `plan`");
  c_eval->add_option("--threshold", ev.threshold, "acceptance threshold");

  PlanArgs pl;
  auto* c_plan = app.add_subcommand("plan", "A* plan in a Door-Key layout");
  c_plan->add_option("--env-seed", pl.env_seed, "layout seed");
  c_plan->add_option("--size", pl.size, "grid size");
  c_plan->add_option("--heuristic", pl.heuristic, "latmos_x, latmos_v, dijkstra or o_l2")
      ->check(CLI::IsMember({"latmos_x", "latmos_v", "dijkstra", "o_l2"}));
  c_plan->add_option("--model", pl.model, "checkpoint for latmos heuristics (trained on the fly if omitted)");
  c_plan->add_option("--lambda", pl.lambda, "depth penalty");
  c_plan->add_option("--budget", pl.budget, "maximum expansions");
  c_plan->add_option("--start-seed", pl.start_seed, "held-out start position seed");
  c_plan->add_option("--goal-test", pl.goal_test, "environment or decoder");
  c_plan->add_option("--goal-threshold", pl.goal_threshold, "decoder goal threshold");
  c_plan->add_option("--out", pl.out, "trace file (stdout if omitted)");
  c_plan->add_option("--latents", pl.latents, "latent dump file");
  c_plan->add_flag("--render", pl.render, "print the layout to stderr");

  ExperimentArgs ex;
  auto* c_exp = app.add_subcommand("experiment", "run an experiment config and write its report");
  c_exp->add_option("--config", ex.config, "experiment config (JSON)")->required();
  c_exp->add_option("--output-root", ex.output_root, "override the output root");
  c_exp->add_option("--threads", ex.threads, "worker threads");
  c_exp->add_option("--set", ex.set, "override a config key: key=value (JSON value)");

  double gc_tol = 1e-4;
  auto* c_gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  c_gc->add_option("--tolerance", gc_tol, "relative error tolerance");

  ExportArgs exp;
  auto* c_export = app.add_subcommand("export", "convert datasets, models, automata and latent dumps");
  c_export->add_option("--dataset", exp.dataset, "dataset to convert");
  c_export->add_option("--format", exp.format, "text or binary")->check(CLI::IsMember({"text", "binary"}));
  c_export->add_option("--model", exp.model, "checkpoint to describe");
  c_export->add_option("--dfa", exp.dfa, "automaton to render as Graphviz");
  c_export->add_option("--latents", exp.latents, "latent dump to project with PCA");
  c_export->add_option("--components", exp.components, "PCA components");
  c_export->add_option("--out", exp.out, "output file (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*c_gd) return gen_dfa(gd);
    if (*c_data) return gen_data(gdat);
    if (*c_train) return train_cmd(tr);
    if (*c_eval) return eval_cmd(ev);
    if (*c_plan) return plan_cmd(pl);
    if (*c_exp) return experiment_cmd(ex);
    if (*c_gc) return gradcheck_cmd(gc_tol);
    if (*c_export) return export_cmd(exp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
