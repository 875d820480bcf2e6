#include "sdlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sdlab {

TauStats tau_from_cycles(std::span<const CycleRecord> cycles) {
  if (cycles.empty()) throw std::invalid_argument("tau: no cycles");
  TauStats s;
  for (const CycleRecord& c : cycles) s.committed += c.accepted + 1;
  s.cycles = cycles.size();
  s.tau = static_cast<double>(s.committed) / static_cast<double>(s.cycles);
  return s;
}

AlphaStats alpha_from_cycles(std::span<const CycleRecord> cycles, std::size_t n_max) {
  std::vector<std::size_t> hits(n_max + 1, 0);
  AlphaStats s;
  s.trials.assign(n_max + 1, 0);
  for (const CycleRecord& c : cycles) {
    if (c.draft.size() <= n_max) throw std::invalid_argument("n-alpha: chain shorter than n_max + 1");
    for (std::size_t n = 0; n <= n_max && n <= c.accepted; ++n) {
      ++s.trials[n];
      if (c.accepted > n) ++hits[n];
    }
  }
  if (s.trials[0] == 0) throw std::invalid_argument("n-alpha: no samples for alpha_0");
  for (std::size_t n = 0; n <= n_max; ++n) {
    s.alpha.push_back(s.trials[n] ? static_cast<double>(hits[n]) / static_cast<double>(s.trials[n])
                                  : 0.0);
  }
  return s;
}

std::vector<CycleRecord> run_cycles(const TargetModel& target, const Drafter& drafter,
                                    std::span<const Sequence> prompts, const EvalOptions& options) {
  if (prompts.empty()) throw std::invalid_argument("eval: no prompts");
  std::vector<CycleRecord> all;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto res = speculative_decode(target, drafter, prompts[i], options.decode,
                                  derive_seed(options.seed, i));
    all.insert(all.end(), std::make_move_iterator(res.cycles.begin()),
               std::make_move_iterator(res.cycles.end()));
  }
  return all;
}

TauStats measure_tau(const TargetModel& target, const Drafter& drafter,
                     std::span<const Sequence> prompts, const EvalOptions& options) {
  return tau_from_cycles(run_cycles(target, drafter, prompts, options));
}

AlphaStats measure_n_alpha(const TargetModel& target, const Drafter& drafter,
                           std::span<const Sequence> prompts, std::size_t n_max,
                           const EvalOptions& options) {
  EvalOptions chain = options;
  chain.decode.use_tree = false;
  chain.decode.depth = n_max + 1;
  return alpha_from_cycles(run_cycles(target, drafter, prompts, chain), n_max);
}

MetricsRecord measure_drafter(const TargetModel& target, const Drafter& drafter,
                              std::span<const Sequence> prompts, const std::string& task,
                              std::uint64_t seed, const EvalOptions& eval, std::size_t n_max,
                              double c_overhead) {
  const TauStats tau = measure_tau(target, drafter, prompts, eval);
  const AlphaStats alpha = measure_n_alpha(target, drafter, prompts, n_max, eval);
  const std::size_t depth = eval.decode.use_tree ? eval.decode.tree.depth : eval.decode.depth;
  const std::size_t context = prompts.front().size();

  MetricsRecord rec;
  rec.drafter = drafter.id();
  rec.task = task;
  rec.seed = seed;
  rec.tau = tau.tau;
  rec.cycles = tau.cycles;
  rec.est_speedup =
      estimate_speedup(tau.tau, depth, draft_cost_ratio(target, drafter, context), c_overhead);
  rec.n_alpha = alpha.alpha;
  rec.alpha_trials = alpha.trials;
  return rec;
}

double estimate_speedup(double tau, std::size_t depth, double c_draft, double c_overhead) {
  return tau / (1.0 + static_cast<double>(depth) * c_draft + c_overhead);
}

double draft_cost_ratio(const TargetModel& target, const Drafter& drafter, std::size_t context) {
  return drafter.step_flops(context) / target.flops_per_token(context);
}

// ---------------------------------------------------------------------------

double sign_test_p(std::size_t wins, std::size_t trials) {
  if (wins > trials) throw std::invalid_argument("sign test: wins exceed trials");
  double p = 0.0;
  for (std::size_t k = wins; k <= trials; ++k) {
    double c = 1.0;
    for (std::size_t i = 0; i < k; ++i) c = c * static_cast<double>(trials - i) / static_cast<double>(i + 1);
    p += c;
  }
  return p / std::pow(2.0, static_cast<double>(trials));
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need >= 2 pairs");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------

std::size_t subset_size(std::size_t total, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("scaling: fractions must lie in (0, 1]");
  }
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  return std::clamp<std::size_t>(n, 1, total);
}

std::vector<Sequence> prompt_prefixes(std::span<const Sequence> seqs, std::size_t len,
                                      std::size_t count) {
  if (count == 0 || count > seqs.size()) count = seqs.size();
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (seqs[i].size() < len) throw std::invalid_argument("prompts: sequence shorter than prompt");
    out.emplace_back(seqs[i].begin(), seqs[i].begin() + static_cast<std::ptrdiff_t>(len));
  }
  return out;
}

Benchmark make_benchmark(std::shared_ptr<const TargetModel> target, const Corpus& corpus,
                         const BenchmarkSpec& spec) {
  if (spec.prompt_len == 0) throw std::invalid_argument("benchmark: prompt_len must be > 0");
  Benchmark b;
  b.train = make_distill_set(*target, prompt_prefixes(corpus.train, spec.prompt_len),
                             spec.gen_len, spec.gen_temperature, spec.seed);
  b.eval_prompts = prompt_prefixes(corpus.heldout, spec.prompt_len, spec.eval_prompts);
  if (b.eval_prompts.empty()) throw std::invalid_argument("benchmark: no held-out prompts");
  b.target = std::move(target);
  return b;
}

TargetModel train_vanilla(std::span<const Sequence> corpus, const ModelConfig& config,
                          const TrainOptions& options, TrainLog* log) {
  return train_target(corpus, config, options, log);
}

MetricsRecord evaluate_drafter(const Benchmark& bench, const DraftConfig& config,
                               std::size_t train_count, std::uint64_t seed,
                               const ExperimentOptions& options) {
  if (train_count == 0 || train_count > bench.train.size()) {
    throw std::invalid_argument("evaluate: bad training subset size");
  }
  std::string key;
  if (options.cache) {
    for (const auto& [k, v] : config.to_kv()) key += k + "=" + v + ";";
    key += "n=" + std::to_string(train_count) + ";seed=" + std::to_string(seed);
    if (auto it = options.cache->find(key); it != options.cache->end()) return it->second;
  }
  TrainOptions train = options.train;
  train.seed = seed;
  auto model = train_feature_draft(bench.target, config,
                                   std::span<const DistillExample>(bench.train).first(train_count),
                                   train);
  const FeatureDrafter drafter(std::shared_ptr<const FeatureDraftModel>(std::move(model)));

  EvalOptions eval = options.eval;
  eval.seed = derive_seed(options.eval.seed, seed);
  MetricsRecord rec = measure_drafter(*bench.target, drafter, bench.eval_prompts, bench.task, seed,
                                      eval, options.n_max, 0.0);
  if (options.cache) (*options.cache)[key] = rec;
  return rec;
}

std::vector<AblationRow> run_ablation(const Benchmark& bench, std::span<const std::uint64_t> seeds,
                                      const ExperimentOptions& options) {
  if (seeds.empty()) throw std::invalid_argument("ablation: no seeds");
  DraftConfig feature;
  feature.kind = DraftKind::kFeature;
  feature.rounds = 1;
  DraftConfig top;
  top.kind = DraftKind::kTopLayer;
  DraftConfig fused;
  fused.kind = DraftKind::kFused;
  const std::pair<const char*, DraftConfig> variants[] = {
      {"feature-regression", feature}, {"no-feature-loss", top}, {"fused-features", fused}};

  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : variants) {
    AblationRow row;
    row.variant = name;
    for (std::uint64_t s : seeds) {
      row.runs.push_back(evaluate_drafter(bench, cfg, bench.train.size(), s, options));
      const MetricsRecord& r = row.runs.back();
      row.tau += r.tau;
      row.alpha_gap += r.n_alpha.front() - r.n_alpha.back();
    }
    row.tau /= static_cast<double>(seeds.size());
    row.alpha_gap /= static_cast<double>(seeds.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ScalingPoint> run_scaling(const Benchmark& bench, std::span<const DraftConfig> variants,
                                      std::span<const double> fractions,
                                      std::span<const std::uint64_t> seeds,
                                      const ExperimentOptions& options) {
  if (seeds.empty() || fractions.empty()) throw std::invalid_argument("scaling: no seeds or fractions");
  for (double f : fractions) subset_size(bench.train.size(), f);
  std::vector<ScalingPoint> out;
  for (const DraftConfig& cfg : variants) {
    for (double f : fractions) {
      ScalingPoint pt;
      pt.variant = to_string(cfg.kind);
      pt.fraction = f;
      pt.examples = subset_size(bench.train.size(), f);
      for (std::uint64_t s : seeds) {
        pt.runs.push_back(evaluate_drafter(bench, cfg, pt.examples, s, options));
        pt.alpha0 += pt.runs.back().n_alpha.at(0);
        pt.alpha1 += pt.runs.back().n_alpha.at(1);
        pt.tau += pt.runs.back().tau;
      }
      const double n = static_cast<double>(seeds.size());
      pt.alpha0 /= n;
      pt.alpha1 /= n;
      pt.tau /= n;
      out.push_back(std::move(pt));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string metrics_csv_header(std::size_t n_alpha) {
  std::string h = "drafter,task,seed,tau,cycles,est_speedup";
  for (std::size_t i = 0; i < n_alpha; ++i) h += ",alpha_" + std::to_string(i);
  for (std::size_t i = 0; i < n_alpha; ++i) h += ",trials_" + std::to_string(i);
  return h;
}

std::string to_csv(std::span<const MetricsRecord> records) {
  const std::size_t width = records.empty() ? 0 : records.front().n_alpha.size();
  std::string out = metrics_csv_header(width) + "\n";
  for (const MetricsRecord& r : records) {
    if (r.n_alpha.size() != width || r.alpha_trials.size() != width) {
      throw std::invalid_argument("csv: records disagree on n-alpha width");
    }
    if (r.drafter.find_first_of(",\n") != std::string::npos ||
        r.task.find_first_of(",\n") != std::string::npos) {
      throw std::invalid_argument("csv: ids must not contain commas or newlines");
    }
    out += r.drafter + "," + r.task + "," + std::to_string(r.seed) + "," + format_double(r.tau) + "," +
           std::to_string(r.cycles) + "," + format_double(r.est_speedup);
    for (double a : r.n_alpha) out += "," + format_double(a);
    for (std::size_t t : r.alpha_trials) out += "," + std::to_string(t);
    out += "\n";
  }
  return out;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: missing header");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 6 || (header.size() - 6) % 2 != 0) throw std::invalid_argument("csv: bad header");
  const std::size_t width = (header.size() - 6) / 2;
  if (line != metrics_csv_header(width)) throw std::invalid_argument("csv: unexpected header");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw std::invalid_argument("csv: row width mismatch");
    MetricsRecord r;
    r.drafter = cells[0];
    r.task = cells[1];
    r.seed = std::stoull(cells[2]);
    r.tau = std::stod(cells[3]);
    r.cycles = std::stoull(cells[4]);
    r.est_speedup = std::stod(cells[5]);
    for (std::size_t i = 0; i < width; ++i) r.n_alpha.push_back(std::stod(cells[6 + i]));
    for (std::size_t i = 0; i < width; ++i) r.alpha_trials.push_back(std::stoull(cells[6 + width + i]));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sdlab
