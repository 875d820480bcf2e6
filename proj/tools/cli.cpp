#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "sdlab/checkpoint.hpp"
#include "sdlab/checks.hpp"
#include "sdlab/harness.hpp"
#include "sdlab/run_config.hpp"
#include "sdlab/tree.hpp"

namespace sdlab {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Violation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  RunConfig config;
  fs::path out_dir;
  std::string command;
  std::ostream* out = nullptr;
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

// JSON-lines log: a metadata line (the only place timestamps appear), the
// effective config, then payload lines.
class JsonLog {
 public:
  explicit JsonLog(const Context& ctx, const std::string& stem = "")
      : path_(ctx.out_dir / ((stem.empty() ? ctx.command : stem) + ".jsonl")) {
    lines_.push_back(json{{"type", "meta"}, {"command", ctx.command}, {"timestamp", utc_timestamp()}});
    lines_.push_back(json{{"type", "config"}, {"config", ctx.config.values()}});
  }
  void add(json line) { lines_.push_back(std::move(line)); }
  void flush() const {
    std::string text;
    for (const json& l : lines_) text += l.dump() + "\n";
    write_file(path_, text);
  }

 private:
  fs::path path_;
  std::vector<json> lines_;
};

json record_json(const MetricsRecord& r) {
  return json{{"type", "metrics"},   {"drafter", r.drafter}, {"task", r.task},
              {"seed", r.seed},      {"tau", r.tau},         {"cycles", r.cycles},
              {"est_speedup", r.est_speedup}, {"n_alpha", r.n_alpha},
              {"alpha_trials", r.alpha_trials}};
}

fs::path artifact(const Context& ctx, const std::string& name) {
  const fs::path p(name);
  return p.is_absolute() ? p : ctx.out_dir / p;
}

fs::path target_path(const Context& ctx) { return artifact(ctx, ctx.config.get("paths.target")); }

std::shared_ptr<const TargetModel> require_target(const Context& ctx, std::uint64_t* hash) {
  const fs::path p = target_path(ctx);
  if (!fs::exists(p)) {
    throw MissingArtifact("missing target checkpoint " + p.string() + " (run train-target first)");
  }
  if (hash) *hash = file_hash(p.string());
  return load_target(p.string());
}

std::size_t default_rounds(DraftKind kind) { return kind == DraftKind::kFeature ? 1 : 3; }

// Benchmark name of a trained drafter: its kind, suffixed with the round
// count when that differs from the kind's default.
std::string draft_name(const DraftConfig& c) {
  std::string name = to_string(c.kind);
  if (c.rounds != default_rounds(c.kind)) name += "-r" + std::to_string(c.rounds);
  return name;
}

fs::path draft_path(const Context& ctx, const std::string& name) {
  return ctx.out_dir / (name == "vanilla" ? std::string("vanilla.ckpt") : "draft-" + name + ".ckpt");
}

BenchmarkSpec benchmark_spec(const RunConfig& c, std::size_t eval_prompts) {
  BenchmarkSpec s;
  s.prompt_len = c.get_size("data.prompt_len");
  s.gen_len = c.get_size("data.gen_len");
  s.gen_temperature = c.get_double("data.gen_temperature");
  s.seed = c.get_u64("data.seed");
  s.eval_prompts = eval_prompts;
  return s;
}

std::string train_log_csv(const TrainLog& log) {
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < log.step_loss.size(); ++i) {
    csv += std::to_string(i + 1) + "," + format_double(log.step_loss[i]) + "\n";
  }
  return csv;
}

// Loads a named drafter: built-ins or a checkpoint trained against `target`.
std::shared_ptr<const Drafter> load_drafter(const Context& ctx, const std::string& name,
                                            std::shared_ptr<const TargetModel> target,
                                            std::uint64_t target_hash) {
  if (name == "identity") return std::make_shared<TransformerDrafter>(target, "identity");
  if (name == "adversarial" || name == "random") {
    auto inner = std::make_shared<TransformerDrafter>(target, "identity");
    return std::make_shared<LogitRewriteDrafter>(
        inner, name == "adversarial" ? LogitRewriteDrafter::Mode::kAdversarial
                                     : LogitRewriteDrafter::Mode::kUniformRandom);
  }
  const fs::path p = draft_path(ctx, name);
  if (!fs::exists(p)) {
    throw MissingArtifact("missing drafter checkpoint " + p.string() + " (run train-draft first)");
  }
  if (name == "vanilla") {
    const Checkpoint ckpt = read_checkpoint(p.string());
    auto it = ckpt.header.find("target_hash");
    if (it == ckpt.header.end() || it->second != hash_hex(target_hash)) {
      throw std::invalid_argument("checkpoint: " + p.string() + " was trained against another target");
    }
    return std::make_shared<TransformerDrafter>(load_target(p.string()), "vanilla");
  }
  return std::make_shared<FeatureDrafter>(load_feature_draft(p.string(), target, target_hash), name);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train_target(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const Corpus corpus = make_corpus(c.corpus());
  ModelConfig mc = c.target_model();
  try {
    mc.validate_taps();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  TrainLog log;
  const TargetModel model = train_target(corpus.train, mc, c.target_train(), &log);
  const fs::path path = target_path(ctx);
  save_target(path.string(), model);

  JsonLog jl(ctx);
  const double loss = next_token_loss(model, corpus.heldout);
  const double acc = greedy_accuracy(model, corpus.heldout);
  jl.add(json{{"type", "summary"},
              {"checkpoint", path.filename().string()},
              {"target_hash", hash_hex(file_hash(path.string()))},
              {"initial_loss", log.initial_loss},
              {"final_loss", log.final_loss},
              {"heldout_loss", loss},
              {"heldout_accuracy", acc}});
  write_file(ctx.out_dir / "train-target.csv", train_log_csv(log));
  jl.flush();
  *ctx.out << "target: heldout loss " << format_double(loss) << ", greedy accuracy "
           << format_double(acc) << " -> " << path.string() << "\n";
  return kExitOk;
}

int cmd_train_draft(const Context& ctx) {
  const RunConfig& c = ctx.config;
  std::uint64_t target_hash = 0;
  auto target = require_target(ctx, &target_hash);
  const Corpus corpus = make_corpus(c.corpus());
  TrainLog log;
  std::string name;

  if (c.get("draft.method") == "vanilla") {
    name = "vanilla";
    TargetModel model = train_vanilla(corpus.train, c.vanilla_model(), c.draft_train(), &log);
    save_target(draft_path(ctx, name).string(), model,
                {{"kind", "vanilla"}, {"target_hash", hash_hex(target_hash)}});
  } else {
    const DraftConfig dc = c.draft();
    if (dc.kind == DraftKind::kFused) {
      try {
        target->config().validate_taps();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("fused drafter needs layer taps: ") + e.what());
      }
    }
    name = draft_name(dc);
    const Benchmark bench = make_benchmark(target, corpus, benchmark_spec(c, 0));
    auto model = train_feature_draft(target, dc, bench.train, c.draft_train(), &log);
    save_feature_draft(draft_path(ctx, name).string(), *model, target_hash);
  }
  const fs::path path = draft_path(ctx, name);
  JsonLog jl(ctx, "train-draft-" + name);
  jl.add(json{{"type", "summary"},
              {"drafter", name},
              {"checkpoint", path.filename().string()},
              {"target_hash", hash_hex(target_hash)},
              {"initial_loss", log.initial_loss},
              {"final_loss", log.final_loss}});
  write_file(ctx.out_dir / ("train-draft-" + name + ".csv"), train_log_csv(log));
  jl.flush();
  *ctx.out << "drafter " << name << ": loss " << format_double(log.initial_loss) << " -> "
           << format_double(log.final_loss) << " -> " << path.string() << "\n";
  return kExitOk;
}

int cmd_bench(const Context& ctx) {
  const RunConfig& c = ctx.config;
  std::uint64_t target_hash = 0;
  auto target = require_target(ctx, &target_hash);
  const auto names = c.get_list("bench.drafters");
  const auto tasks = c.get_list("bench.tasks");
  if (names.empty()) throw ConfigError("config: bench.drafters is empty");
  if (tasks.empty()) throw ConfigError("config: bench.tasks is empty");
  std::vector<std::shared_ptr<const Drafter>> drafters;
  for (const auto& n : names) drafters.push_back(load_drafter(ctx, n, target, target_hash));

  EvalOptions eval;
  eval.decode = c.decode();
  eval.decode.keep_trees = c.get_bool("bench.dump_trees");
  const std::size_t n_max = c.get_size("bench.n_max");
  const double overhead = c.get_double("bench.c_overhead");
  const std::uint64_t seed = c.get_u64("bench.seed");
  const bool trace = c.get_bool("bench.trace");
  const std::size_t prompt_len = c.get_size("data.prompt_len");
  const std::size_t count = c.get_size("bench.prompts");

  JsonLog jl(ctx);
  std::vector<MetricsRecord> records;
  std::string trace_text, tree_text;
  for (const auto& task : tasks) {
    CorpusSpec spec = c.corpus();
    if (task == "shifted") {
      spec.noise = c.get_double("bench.shifted_noise");
      spec.seed = derive_seed(spec.seed, 1);
    } else if (task != "heldout") {
      throw ConfigError("config: unknown bench task '" + task + "'");
    }
    const auto prompts = prompt_prefixes(make_corpus(spec).heldout, prompt_len, count);
    for (const auto& drafter : drafters) {
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        EvalOptions e = eval;
        e.seed = derive_seed(seed, i);
        const std::span<const Sequence> one(&prompts[i], 1);
        const std::string id = task + "/" + std::to_string(i);
        records.push_back(measure_drafter(*target, *drafter, one, id, seed, e, n_max, overhead));
        jl.add(record_json(records.back()));
        if (trace || e.decode.keep_trees) {
          const auto cycles = run_cycles(*target, *drafter, one, e);
          for (std::size_t k = 0; k < cycles.size(); ++k) {
            if (trace) {
              trace_text += json{{"drafter", drafter->id()}, {"task", id}, {"cycle", k},
                                 {"draft", cycles[k].draft}, {"accepted", cycles[k].accepted},
                                 {"committed", cycles[k].committed}}
                                .dump() +
                            "\n";
            }
            if (e.decode.keep_trees) {
              tree_text += "# " + drafter->id() + " " + id + " cycle " + std::to_string(k) + "\n" +
                           dump_tree(cycles[k].tree);
            }
          }
        }
      }
    }
  }
  write_file(ctx.out_dir / "bench.csv", to_csv(records));
  if (trace) write_file(ctx.out_dir / "bench-trace.jsonl", trace_text);
  if (eval.decode.keep_trees) write_file(ctx.out_dir / "bench-trees.txt", tree_text);
  jl.flush();

  for (const auto& drafter : drafters) {
    double tau = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
      if (r.drafter == drafter->id()) {
        tau += r.tau;
        ++n;
      }
    }
    *ctx.out << drafter->id() << ": mean tau " << format_double(tau / static_cast<double>(n))
             << " over " << n << " prompts\n";
  }
  return kExitOk;
}

int cmd_verify_lossless(const Context& ctx) {
  const RunConfig& c = ctx.config;
  LosslessOptions lo;
  lo.pairs = c.get_size("verify.pairs");
  lo.vocab = c.get_size("verify.vocab");
  lo.max_depth = c.get_size("verify.depth");
  lo.length = c.get_size("verify.length");
  lo.temperature = c.get_double("verify.temperature");
  lo.seed = c.get_u64("verify.seed");
  if (lo.temperature <= 0.0) throw ConfigError("config: verify.temperature must be > 0");
  if (lo.vocab < 2 || lo.vocab > 16) throw ConfigError("config: verify.vocab must be in [2, 16]");
  if (lo.max_depth > 3) throw ConfigError("config: verify.depth must be <= 3");
  const double tol = c.get_double("verify.tolerance");
  const LosslessReport lossless = check_lossless(lo);

  // Greedy equivalence on the trained target when present, else a random
  // target of the configured shape.
  std::shared_ptr<const TargetModel> target;
  std::uint64_t target_hash = 0;
  std::vector<Sequence> prompts;
  const std::size_t prompt_len = c.get_size("data.prompt_len");
  const Corpus corpus = make_corpus(c.corpus());
  std::vector<std::string> names = {"identity", "adversarial", "random"};
  std::string target_label;
  if (fs::exists(target_path(ctx))) {
    target = require_target(ctx, &target_hash);
    target_label = target_path(ctx).filename().string();
    for (const char* n : {"vanilla", "feature", "top-layer", "fused"}) {
      if (fs::exists(draft_path(ctx, n))) names.emplace_back(n);
    }
  } else {
    target = std::make_shared<TargetModel>(c.target_model(), c.get_u64("target.seed"));
    target_label = "random";
  }
  prompts = prompt_prefixes(corpus.heldout, prompt_len, c.get_size("verify.greedy_prompts"));
  std::vector<std::shared_ptr<const Drafter>> drafters;
  for (const auto& n : names) drafters.push_back(load_drafter(ctx, n, target, target_hash));
  const GreedyReport greedy = check_greedy(*target, drafters, prompts, c.decode());

  std::string csv = "suite,case,mode,depth,value\n";
  JsonLog jl(ctx);
  for (const LosslessCase& k : lossless.cases) {
    csv += "lossless," + std::to_string(k.pair) + "," + k.mode + "," + std::to_string(k.depth) +
           "," + format_double(k.tv) + "\n";
  }
  for (const auto& d : drafters) {
    std::size_t bad = 0;
    for (const auto& m : greedy.mismatches) bad += m.drafter == d->id();
    csv += "greedy," + d->id() + ",chain+tree," + std::to_string(c.get_size("decode.depth")) +
           "," + std::to_string(bad) + "\n";
  }
  for (const auto& m : greedy.mismatches) {
    jl.add(json{{"type", "greedy_mismatch"}, {"drafter", m.drafter}, {"mode", m.mode},
                {"prompt", m.prompt}, {"position", m.position}});
  }
  jl.add(json{{"type", "summary"},
              {"max_tv", lossless.max_tv},
              {"tolerance", tol},
              {"lossless_cases", lossless.cases.size()},
              {"greedy_target", target_label},
              {"greedy_runs", greedy.runs},
              {"greedy_mismatches", greedy.mismatches.size()}});
  write_file(ctx.out_dir / "verify-lossless.csv", csv);
  jl.flush();

  *ctx.out << "lossless: " << lossless.cases.size() << " cases, max TV "
           << format_double(lossless.max_tv) << " (tolerance " << format_double(tol) << ")\n"
           << "greedy: " << greedy.runs << " runs on " << target_label << " target, "
           << greedy.mismatches.size() << " mismatches\n";
  if (!(lossless.max_tv < tol)) throw Violation("output distribution differs from the target's");
  if (!greedy.mismatches.empty()) throw Violation("greedy speculative output differs from greedy");
  return kExitOk;
}

ExperimentOptions experiment_options(const RunConfig& c) {
  ExperimentOptions o;
  o.train = c.draft_train();
  o.eval.decode = c.decode();
  o.eval.seed = c.get_u64("bench.seed");
  o.n_max = c.get_size("bench.n_max");
  return o;
}

Benchmark experiment_benchmark(const Context& ctx) {
  auto target = require_target(ctx, nullptr);
  return make_benchmark(target, make_corpus(ctx.config.corpus()),
                        benchmark_spec(ctx.config, ctx.config.get_size("experiment.prompts")));
}

int cmd_scaling(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const auto fractions = c.get_doubles("experiment.fractions");
  const auto seeds = c.get_u64s("experiment.scaling_seeds");
  if (fractions.size() < 2 || seeds.empty()) {
    throw ConfigError("config: scaling needs >= 2 fractions and >= 1 seed");
  }
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: experiment.fractions must lie in (0, 1]");
  }
  const Benchmark bench = experiment_benchmark(ctx);
  DraftConfig fused, feature;
  fused.kind = DraftKind::kFused;
  feature.kind = DraftKind::kFeature;
  feature.rounds = 1;
  const DraftConfig variants[] = {fused, feature};
  const auto points = run_scaling(bench, variants, fractions, seeds, experiment_options(c));

  JsonLog jl(ctx);
  std::string csv = "variant,fraction,examples,alpha_0,alpha_1,tau\n";
  std::vector<MetricsRecord> runs;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> curves;
  for (const ScalingPoint& p : points) {
    csv += p.variant + "," + format_double(p.fraction) + "," + std::to_string(p.examples) + "," +
           format_double(p.alpha0) + "," + format_double(p.alpha1) + "," + format_double(p.tau) + "\n";
    jl.add(json{{"type", "point"}, {"variant", p.variant}, {"fraction", p.fraction},
                {"examples", p.examples}, {"alpha_0", p.alpha0}, {"alpha_1", p.alpha1},
                {"tau", p.tau}});
    for (MetricsRecord r : p.runs) {
      r.task = bench.task + "@" + format_double(p.fraction);
      runs.push_back(std::move(r));
    }
    curves[p.variant].first.push_back(p.fraction);
    curves[p.variant].second.push_back(p.tau);
  }
  for (const auto& [variant, xy] : curves) {
    const double rho = spearman(xy.first, xy.second);
    jl.add(json{{"type", "trend"}, {"variant", variant}, {"spearman_tau_vs_fraction", rho}});
    *ctx.out << variant << ": spearman(tau, fraction) = " << format_double(rho) << "\n";
  }
  write_file(ctx.out_dir / "scaling.csv", csv);
  write_file(ctx.out_dir / "scaling-runs.csv", to_csv(runs));
  jl.flush();
  return kExitOk;
}

int cmd_ablation(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const auto seeds = c.get_u64s("experiment.seeds");
  if (seeds.empty()) throw ConfigError("config: experiment.seeds is empty");
  const Benchmark bench = experiment_benchmark(ctx);
  const auto rows = run_ablation(bench, seeds, experiment_options(c));

  JsonLog jl(ctx);
  std::string csv = "variant,tau,alpha_gap\n";
  std::vector<MetricsRecord> runs;
  for (const AblationRow& r : rows) {
    csv += r.variant + "," + format_double(r.tau) + "," + format_double(r.alpha_gap) + "\n";
    jl.add(json{{"type", "row"}, {"variant", r.variant}, {"tau", r.tau}, {"alpha_gap", r.alpha_gap}});
    *ctx.out << r.variant << ": tau " << format_double(r.tau) << ", alpha_0 - alpha_n "
             << format_double(r.alpha_gap) << "\n";
    runs.insert(runs.end(), r.runs.begin(), r.runs.end());
  }
  // Paired per-seed comparisons along the row order.
  for (std::size_t v = 0; v + 1 < rows.size(); ++v) {
    std::size_t wins = 0;
    for (std::size_t s = 0; s < seeds.size(); ++s) wins += rows[v + 1].runs[s].tau > rows[v].runs[s].tau;
    jl.add(json{{"type", "sign_test"}, {"better", rows[v + 1].variant}, {"worse", rows[v].variant},
                {"metric", "tau"}, {"wins", wins}, {"trials", seeds.size()},
                {"p", sign_test_p(wins, seeds.size())}});
  }
  write_file(ctx.out_dir / "ablation.csv", csv);
  write_file(ctx.out_dir / "ablation-runs.csv", to_csv(runs));
  jl.flush();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speculative decoding lab"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI config file (key = value)");
    sub->add_option("--set", sets, "Override one config key (key=value)");
    sub->add_option("--out", out_dir, "Output directory");
  };

  auto* train_target_cmd = app.add_subcommand("train-target", "Train the target model");
  auto* train_draft_cmd = app.add_subcommand("train-draft", "Train a drafter against the target");
  auto* bench_cmd = app.add_subcommand("bench", "Measure tau, n-alpha and speedup per prompt");
  auto* verify_cmd =
      app.add_subcommand("verify-lossless", "Exact losslessness and greedy-equivalence checks");
  auto* scaling_cmd = app.add_subcommand("scaling", "tau against training-data fraction");
  auto* ablation_cmd = app.add_subcommand("ablation", "Drafter input/training ablation");
  for (CLI::App* sub :
       {train_target_cmd, train_draft_cmd, bench_cmd, verify_cmd, scaling_cmd, ablation_cmd}) {
    common(sub);
  }
  std::string method;
  std::optional<std::size_t> rounds;
  bool no_ttt = false, top_layer_only = false;
  train_draft_cmd->add_option("--method", method, "Drafter: fused, feature or vanilla")
      ->check(CLI::IsMember({"fused", "feature", "vanilla"}));
  train_draft_cmd->add_option("--rounds", rounds, "Training-time-test rounds");
  train_draft_cmd->add_flag("--no-ttt", no_ttt, "Single-round training");
  train_draft_cmd->add_flag("--top-layer-only", top_layer_only,
                            "Feed the top-layer feature instead of fused taps");

  std::vector<std::string> argv_store = {"sdlab"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Context ctx;
  ctx.out = &out;
  ctx.out_dir = out_dir;
  try {
    for (CLI::App* sub : app.get_subcommands()) ctx.command = sub->get_name();
    if (!config_path.empty()) ctx.config.load_file(config_path);
    for (const auto& s : sets) ctx.config.set_assignment(s);

    if (ctx.command == "train-draft") {
      if (!method.empty()) ctx.config.set("draft.method", method);
      const std::string m = ctx.config.get("draft.method");
      const bool vanilla = m == "vanilla";
      if (vanilla && (rounds || no_ttt || top_layer_only)) {
        throw ConfigError("--rounds, --no-ttt and --top-layer-only do not apply to vanilla");
      }
      if (rounds && no_ttt) throw ConfigError("--rounds conflicts with --no-ttt");
      if (m == "feature" && (top_layer_only || (rounds && *rounds != 1))) {
        throw ConfigError("feature drafter: single round on the top-layer feature only");
      }
      if (top_layer_only) {
        if (m != "fused") throw ConfigError("--top-layer-only applies to --method fused");
        ctx.config.set("draft.method", "top-layer");
      }
      if (rounds) ctx.config.set("draft.rounds", std::to_string(*rounds));
      if (no_ttt || m == "feature") ctx.config.set("draft.rounds", "1");
    }

    fs::create_directories(ctx.out_dir);
    if (ctx.command == "train-target") return cmd_train_target(ctx);
    if (ctx.command == "train-draft") return cmd_train_draft(ctx);
    if (ctx.command == "bench") return cmd_bench(ctx);
    if (ctx.command == "verify-lossless") return cmd_verify_lossless(ctx);
    if (ctx.command == "scaling") return cmd_scaling(ctx);
    if (ctx.command == "ablation") return cmd_ablation(ctx);
    err << "error: unknown command\n";
    return kExitUsage;
  } catch (const Violation& e) {
    err << "violation: " << e.what() << "\n";
    return kExitViolation;
  } catch (const NumericError& e) {
    err << "violation: " << e.what() << "\n";
    return kExitViolation;
  } catch (const DegenerateResidual& e) {
    err << "violation: " << e.what() << "\n";
    return kExitViolation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace sdlab
