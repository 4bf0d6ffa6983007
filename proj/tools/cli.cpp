#include "cli.hpp"

#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tabreason/config.hpp"
#include "tabreason/eval_harness.hpp"
#include "tabreason/grpo.hpp"
#include "tabreason/policy.hpp"
#include "tabreason/synthetic.hpp"
#include "tabreason/trace_pipeline.hpp"

namespace tabreason::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class PostconditionFailure : public Error {
 public:
  using Error::Error;
};

struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* sub) {
    sub->add_option("--config", path, "TOML-style config file");
    sub->add_option("--set", overrides, "override one key, e.g. --set grpo.iterations=100");
  }

  config::PipelineConfig load() const {
    config::PipelineConfig cfg;
    if (!path.empty()) config::apply_file(cfg, path);
    for (const auto& o : overrides) config::apply_override(cfg, o);
    cfg.finalize();
    return cfg;
  }
};

std::string digest(std::string_view contents) { return hex64(fnv1a64(contents)); }

// Records what a stage read and wrote. File names only, never directories, so
// identical runs into different output directories agree byte for byte.
class Manifest {
 public:
  Manifest(std::string command, fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    j_["command"] = std::move(command);
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
    j_["seeds"] = json::object();
  }

  void config(const config::PipelineConfig& cfg) {
    j_["config_hash"] = digest(config::dump(cfg));
  }
  void seed(const std::string& name, std::uint64_t value) { j_["seeds"][name] = value; }
  void input(const std::string& role, const std::string& path) {
    j_["inputs"][role] = {{"file", fs::path(path).filename().string()},
                          {"fnv1a64", digest(read_file(path))}};
  }
  void output(const std::string& name, const std::string& contents) {
    write_file((dir_ / name).string(), contents);
    j_["outputs"][name] = digest(contents);
  }
  json& operator[](const std::string& key) { return j_[key]; }
  void write() const { write_file((dir_ / "manifest.json").string(), j_.dump(2) + "\n"); }

 private:
  fs::path dir_;
  json j_;
};

std::unique_ptr<llm::ChatClient> make_client(const config::ClientSection& section,
                                             const config::PipelineConfig& cfg) {
  if (section.backend == "http") {
    return std::make_unique<llm::HttpChatClient>(section.client);
  }
  return std::make_unique<llm::MockChatClient>(cfg.mock_seed, cfg.mock, cfg.match);
}

std::vector<synth::SyntheticTask> load_suite_dir(const std::string& dir, Manifest& m,
                                                 const std::string& role) {
  const std::string inst = (fs::path(dir) / "instances.jsonl").string();
  const std::string cand = (fs::path(dir) / "candidates.jsonl").string();
  auto tasks = synth::load_suite(inst, cand);
  m.input(role + ".instances", inst);
  m.input(role + ".candidates", cand);
  return tasks;
}

std::vector<policy::FeaturizedTask> featurize_all(
    const std::vector<synth::SyntheticTask>& tasks, std::uint32_t dim) {
  std::vector<policy::FeaturizedTask> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(policy::featurize_task(t, dim));
  return out;
}

policy::LinearSoftmaxPolicy load_policy(const std::string& path, std::uint32_t dim,
                                        Manifest& m) {
  if (path.empty()) return policy::LinearSoftmaxPolicy(dim);
  auto p = policy::LinearSoftmaxPolicy::deserialize(read_file(path));
  m.input("checkpoint", path);
  if (p.dim() != dim) {
    throw config::ConfigError("checkpoint has dim " + std::to_string(p.dim()) +
                              " but policy.dim is " + std::to_string(dim));
  }
  return p;
}

json eval_json(const grpo::EvalSummary& e) {
  return {{"n", e.n}, {"accuracy", e.accuracy}, {"format_rate", e.format_rate}};
}

// ---------------------------------------------------------------------------

struct GenSyntheticArgs {
  std::uint64_t seed = 0;
  std::size_t n = 200;
  std::string kinds;
  std::string out = "synthetic";
};

int gen_synthetic(const GenSyntheticArgs& a, std::ostream& out) {
  synth::KindMix mix;
  std::string kinds_label = "all";
  if (a.kinds.empty()) {
    mix = synth::uniform_mix();
  } else {
    kinds_label = a.kinds;
    std::istringstream in(a.kinds);
    for (std::string name; std::getline(in, name, ',');) {
      const auto k = synth::kind_from_string(trim(name));
      if (!k) throw config::ConfigError("unknown question kind: " + name);
      mix[*k] = 1.0;
    }
    if (mix.empty()) throw config::ConfigError("--kinds is empty");
  }
  const auto tasks = synth::make_suite(a.seed, a.n, mix);
  Manifest m("gen-synthetic", a.out);
  m.seed("suite", a.seed);
  m["params"] = {{"n", a.n}, {"kinds", kinds_label}};
  m.output("instances.jsonl", synth::instances_to_jsonl(tasks));
  m.output("candidates.jsonl", synth::candidates_to_jsonl(tasks));
  m.write();
  out << "wrote " << tasks.size() << " tasks to " << a.out << "\n";
  return kOk;
}

struct GenTracesArgs {
  ConfigFlags config;
  std::string in;
  std::string out = "traces";
};

int gen_traces(const GenTracesArgs& a, std::ostream& out, std::ostream& err) {
  const auto cfg = a.config.load();
  const std::string path = a.in.empty() ? cfg.instances_path : a.in;
  if (path.empty()) throw config::ConfigError("no instances: pass --in or set data.instances");

  Manifest m("gen-traces", a.out);
  m.config(cfg);
  m.seed("data", cfg.data_seed);
  m.seed("mock", cfg.mock_seed);
  auto instances = table::load_instances(path);
  m.input("instances", path);
  if (cfg.n_per_dataset > 0) {
    instances = table::sample_per_dataset(instances, cfg.n_per_dataset, cfg.data_seed);
  }
  const auto index = table::index_by_id(instances);

  auto generator = make_client(cfg.generator, cfg);
  std::unique_ptr<llm::ChatClient> judge;
  if (cfg.judge_traces) judge = make_client(cfg.judge, cfg);

  traces::PipelineConfig pc;
  pc.generator = cfg.generator.model;
  pc.judge = cfg.judge.model;
  pc.filter = cfg.filter;
  pc.max_in_flight = cfg.generator.client.max_in_flight;
  pc.generation_retries = cfg.generation_retries;
  const auto result = traces::run_pipeline(instances, *generator, judge.get(), pc);

  const auto unresolved = result.unresolved_ids();
  const auto by_reason = result.rejections_by_reason();
  std::string sft;
  try {
    sft = traces::sft_jsonl(result.kept(), index, cfg.match);
  } catch (const Error& e) {
    throw PostconditionFailure(e.what());
  }
  m["counts"] = {{"total", instances.size()},
                 {"kept", result.kept_count()},
                 {"rejected", result.rejected_count()},
                 {"rejected_by_reason", by_reason},
                 {"unresolved", unresolved}};
  m.output("traces.jsonl", traces::traces_jsonl(result));
  m.output("sft.jsonl", sft);
  m["complete"] = unresolved.empty();
  m.write();

  out << "instances: " << instances.size() << "\n"
      << "kept: " << result.kept_count() << "\n"
      << "rejected: " << result.rejected_count() << "\n";
  for (const auto& [reason, n] : by_reason) out << "  " << reason << ": " << n << "\n";
  out << "unresolved: " << unresolved.size() << "\n";

  if (result.kept_count() + result.rejected_count() + unresolved.size() !=
      instances.size()) {
    throw PostconditionFailure("kept + rejected + unresolved != instances");
  }
  if (!unresolved.empty()) {
    for (const auto& e : result.entries) {
      if (e.error) err << e.record.instance_id << ": " << *e.error << "\n";
    }
    err << unresolved.size() << " instances unresolved; partial outputs kept in "
        << a.out << "\n";
    return kClientError;
  }
  return kOk;
}

struct TrainArgs {
  ConfigFlags config;
  std::string stage = "both";
  std::string suite;
  std::string heldout;
  std::string init;
  std::string out = "run";
};

int train(const TrainArgs& a, std::ostream& out) {
  const auto cfg = a.config.load();
  const bool do_sft = a.stage == "sft" || a.stage == "both";
  const bool do_grpo = a.stage == "grpo" || a.stage == "both";

  Manifest m("train", a.out);
  m.config(cfg);
  m.seed("grpo", cfg.grpo.seed);
  m["stage"] = a.stage;
  const auto tasks = load_suite_dir(a.suite, m, "suite");
  if (tasks.empty()) throw config::ConfigError("training suite is empty");
  const auto held_tasks =
      a.heldout.empty() ? tasks : load_suite_dir(a.heldout, m, "heldout");
  const auto train_ft = featurize_all(tasks, cfg.policy_dim);
  const auto held_ft = featurize_all(held_tasks, cfg.policy_dim);

  auto pol = load_policy(a.init, cfg.policy_dim, m);

  if (do_sft) {
    std::vector<policy::SftExample> examples;
    for (const auto& ft : train_ft) examples.push_back({&ft, ft.task->gold_index});
    const auto rep = policy::sft_fit(pol, examples, cfg.sft_lr, cfg.sft_epochs);
    std::string lines;
    for (std::size_t i = 0; i < rep.loss.size(); ++i) {
      lines += json{{"epoch", i}, {"loss", rep.loss[i]}}.dump() + "\n";
    }
    m.output("sft_report.jsonl", lines);
    for (std::size_t i = 1; i < rep.loss.size(); ++i) {
      if (rep.loss[i] > rep.loss[i - 1] + 1e-12 * std::max(1.0, rep.loss[i - 1])) {
        m.write();
        throw PostconditionFailure("sft loss increased at epoch " + std::to_string(i));
      }
    }
  }
  if (do_grpo) {
    const auto rep = grpo::train(pol, train_ft, held_ft, cfg.grpo);
    m.output("grpo_report.jsonl", grpo::report_to_jsonl(rep));
    m.output("grpo_summary.json", grpo::summary_json(rep));
  }

  const auto train_eval = grpo::greedy_eval(pol, train_ft, cfg.match);
  const auto held_eval = grpo::greedy_eval(pol, held_ft, cfg.match);
  json summary = {{"stage", a.stage},
                  {"train", eval_json(train_eval)},
                  {"heldout", eval_json(held_eval)}};
  m.output("policy.json", pol.serialize());
  m.output("summary.json", summary.dump(2) + "\n");
  m.write();

  out << "stage " << a.stage << ": train accuracy " << format_double(train_eval.accuracy)
      << ", held-out accuracy " << format_double(held_eval.accuracy)
      << ", held-out format " << format_double(held_eval.format_rate) << "\n";

  bool finite = std::isfinite(pol.format_logit());
  for (double w : pol.weights()) finite = finite && std::isfinite(w);
  if (!finite) throw PostconditionFailure("policy parameters are not finite");
  return kOk;
}

struct PredictArgs {
  std::string checkpoint;
  std::string suite;
  std::string tag = "model";
  std::uint32_t dim = policy::kDefaultDim;
  std::string out = "predictions";
};

int predict(const PredictArgs& a, std::ostream& out) {
  Manifest m("predict", a.out);
  const auto tasks = load_suite_dir(a.suite, m, "suite");
  const auto pol = load_policy(a.checkpoint, a.dim, m);
  std::vector<eval::Prediction> preds;
  for (const auto& t : tasks) {
    const auto ft = policy::featurize_task(t, a.dim);
    preds.push_back({t.instance.id, policy::greedy_response(pol, ft).text, a.tag});
  }
  m["model_tag"] = a.tag;
  m.output("predictions.jsonl", eval::predictions_to_jsonl(preds));
  m.write();
  out << "wrote " << preds.size() << " predictions to " << a.out << "\n";
  return kOk;
}

struct EvalArgs {
  ConfigFlags config;
  std::string predictions;
  std::string instances;
  std::string judge = "llm";
  std::string out = "eval";
};

int evaluate(const EvalArgs& a, std::ostream& out) {
  const auto cfg = a.config.load();
  const std::string inst_path = a.instances.empty() ? cfg.instances_path : a.instances;
  if (inst_path.empty()) {
    throw config::ConfigError("no instances: pass --instances or set data.instances");
  }
  Manifest m("eval", a.out);
  m.config(cfg);
  m.seed("mock", cfg.mock_seed);
  const auto preds = eval::load_predictions(a.predictions);
  m.input("predictions", a.predictions);
  const auto index = table::index_by_id(table::load_instances(inst_path));
  m.input("instances", inst_path);

  std::unique_ptr<llm::ChatClient> judge;
  if (a.judge == "llm") judge = make_client(cfg.judge, cfg);
  eval::EvalOptions opts;
  opts.match = cfg.match;
  opts.judge_settings = cfg.judge.model;
  opts.max_in_flight = cfg.judge.client.max_in_flight;
  const auto report = eval::evaluate(preds, index, judge.get(), opts);

  const auto table = eval::to_table({report});
  const std::string md = eval::render_table_markdown(table);
  m["judge_mode"] = eval::to_string(report.judge_mode);
  m["fallback_count"] = report.fallback_count;
  m.output("report.md", md);
  m.output("report.csv", eval::render_table_csv(table));
  m.write();
  out << md;
  if (report.fallback_count > 0) {
    out << report.fallback_count << " verdicts fell back to the rule matcher\n";
  }
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out = "report";
};

int report(const ReportArgs& a, std::ostream& out) {
  Manifest m("report", a.out);
  std::vector<eval::ReportTable> tables;
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    tables.push_back(eval::parse_report_csv(read_file(a.runs[i])));
    m.input("run" + std::to_string(i), a.runs[i]);
  }
  const auto merged = eval::merge_reports(tables);
  const std::string md = eval::render_table_markdown(merged);
  m.output("comparison.md", md);
  m.output("comparison.csv", eval::render_table_csv(merged));
  m.write();
  out << md;
  return kOk;
}

}  // namespace

std::string defaults_help() {
  const config::PipelineConfig defaults;
  std::string out = "Config keys (section.key = default):\n";
  for (const auto& e : config::entries()) {
    out += "  " + e.key + " = " + e.get(defaults) + "\n      " + e.doc + "\n";
  }
  out += "\nExit codes: 0 ok, 2 config or input error, 3 client error, 4 postcondition failure.\n";
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tabular reasoning pipeline: synthetic tasks, trace curation, "
               "SFT/GRPO training of a toy policy, and evaluation."};
  app.name("tabreason");
  app.footer(defaults_help());
  app.require_subcommand(1);

  ConfigFlags show_flags;
  auto* config_cmd = app.add_subcommand("config", "inspect configuration");
  config_cmd->require_subcommand(1);
  auto* show_cmd = config_cmd->add_subcommand("show", "print every key with its effective value");
  show_flags.attach(show_cmd);

  GenSyntheticArgs gs;
  auto* gs_cmd = app.add_subcommand("gen-synthetic", "write a synthetic task suite");
  gs_cmd->add_option("--seed", gs.seed, "suite seed")->capture_default_str();
  gs_cmd->add_option("--n", gs.n, "number of tasks")->capture_default_str();
  gs_cmd->add_option("--kinds", gs.kinds,
                     "comma-separated question kinds (default: all, uniform)");
  gs_cmd->add_option("--out", gs.out, "output directory")->capture_default_str();

  GenTracesArgs gt;
  auto* gt_cmd = app.add_subcommand("gen-traces", "generate, filter, and emit SFT traces");
  gt.config.attach(gt_cmd);
  gt_cmd->add_option("--in", gt.in, "instance JSONL (default: data.instances)");
  gt_cmd->add_option("--out", gt.out, "output directory")->capture_default_str();

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "train the toy policy");
  tr.config.attach(tr_cmd);
  tr_cmd->add_option("--stage", tr.stage, "sft, grpo, or both")
      ->check(CLI::IsMember({"sft", "grpo", "both"}))
      ->capture_default_str();
  tr_cmd->add_option("--suite", tr.suite, "training suite directory")->required();
  tr_cmd->add_option("--heldout", tr.heldout, "held-out suite directory (default: --suite)");
  tr_cmd->add_option("--init", tr.init, "starting checkpoint (default: uniform policy)");
  tr_cmd->add_option("--out", tr.out, "output directory")->capture_default_str();

  PredictArgs pr;
  auto* pr_cmd = app.add_subcommand("predict", "greedy predictions of a checkpoint on a suite");
  pr_cmd->add_option("--checkpoint", pr.checkpoint, "policy.json (default: uniform policy)");
  pr_cmd->add_option("--suite", pr.suite, "suite directory")->required();
  pr_cmd->add_option("--tag", pr.tag, "model tag written with each prediction")
      ->capture_default_str();
  pr_cmd->add_option("--dim", pr.dim, "feature dimension of the uniform policy")
      ->capture_default_str();
  pr_cmd->add_option("--out", pr.out, "output directory")->capture_default_str();

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "score predictions against gold answers");
  ev.config.attach(ev_cmd);
  ev_cmd->add_option("--predictions", ev.predictions, "prediction JSONL")->required();
  ev_cmd->add_option("--instances", ev.instances, "instance JSONL (default: data.instances)");
  ev_cmd->add_option("--judge", ev.judge, "llm or rule")
      ->check(CLI::IsMember({"llm", "rule"}))
      ->capture_default_str();
  ev_cmd->add_option("--out", ev.out, "output directory")->capture_default_str();

  ReportArgs rp;
  auto* rp_cmd = app.add_subcommand("report", "merge eval reports into one table");
  rp_cmd->add_option("--runs", rp.runs, "report.csv files, one row each")->required();
  rp_cmd->add_option("--out", rp.out, "output directory")->capture_default_str();

  std::vector<const char*> argv{"tabreason"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kConfigError;
  }

  try {
    if (show_cmd->parsed()) {
      out << config::dump(show_flags.load());
      return kOk;
    }
    if (gs_cmd->parsed()) return gen_synthetic(gs, out);
    if (gt_cmd->parsed()) return gen_traces(gt, out, err);
    if (tr_cmd->parsed()) return train(tr, out);
    if (pr_cmd->parsed()) return predict(pr, out);
    if (ev_cmd->parsed()) return evaluate(ev, out);
    if (rp_cmd->parsed()) return report(rp, out);
  } catch (const PostconditionFailure& e) {
    err << "postcondition failed: " << e.what() << "\n";
    return kPostcondition;
  } catch (const llm::ClientError& e) {
    err << "client error: " << e.what() << "\n";
    return kClientError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}

}  // namespace tabreason::cli
