#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdlab/corpus.hpp"
#include "sdlab/decoding.hpp"
#include "sdlab/draft_model.hpp"
#include "sdlab/drafter.hpp"
#include "sdlab/model.hpp"
#include "sdlab/training.hpp"

namespace sdlab {

struct MetricsRecord {
  std::string drafter;
  std::string task;
  std::uint64_t seed = 0;
  double tau = 0.0;
  std::size_t cycles = 0;
  double est_speedup = 0.0;
  std::vector<double> n_alpha;
  std::vector<std::size_t> alpha_trials;

  bool operator==(const MetricsRecord&) const = default;
};

struct TauStats {
  double tau = 0.0;
  std::size_t cycles = 0;
  std::size_t committed = 0;
};

struct AlphaStats {
  std::vector<double> alpha;
  std::vector<std::size_t> trials;  // cycles whose first n drafts were accepted
};

// Mean committed tokens per cycle. Throws on an empty record list.
TauStats tau_from_cycles(std::span<const CycleRecord> cycles);
// alpha_n from chain cycles of depth > n_max.
AlphaStats alpha_from_cycles(std::span<const CycleRecord> cycles, std::size_t n_max);

struct EvalOptions {
  DecodeConfig decode;
  std::uint64_t seed = 0;
};

// Decodes every prompt (seed derived per prompt) and pools the cycles.
std::vector<CycleRecord> run_cycles(const TargetModel& target, const Drafter& drafter,
                                    std::span<const Sequence> prompts, const EvalOptions& options);

TauStats measure_tau(const TargetModel& target, const Drafter& drafter,
                     std::span<const Sequence> prompts, const EvalOptions& options);

// Chain drafting of depth n_max + 1 regardless of options.decode.depth /
// use_tree. Throws if alpha_0 has no samples.
AlphaStats measure_n_alpha(const TargetModel& target, const Drafter& drafter,
                           std::span<const Sequence> prompts, std::size_t n_max,
                           const EvalOptions& options);

// tau (configured decode), n-alpha and estimated speedup of one prepared
// drafter over `prompts`. eval.seed is used as given.
MetricsRecord measure_drafter(const TargetModel& target, const Drafter& drafter,
                              std::span<const Sequence> prompts, const std::string& task,
                              std::uint64_t seed, const EvalOptions& eval, std::size_t n_max,
                              double c_overhead);

double estimate_speedup(double tau, std::size_t depth, double c_draft, double c_overhead);

// Draft step flops over target token flops at `context`.
double draft_cost_ratio(const TargetModel& target, const Drafter& drafter, std::size_t context);

// ---------------------------------------------------------------------------
// Statistics

// One-sided sign test: probability of at least `wins` successes out of
// `trials` fair coin flips.
double sign_test_p(std::size_t wins, std::size_t trials);
// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Experiments

// Everything the drafter experiments share: the frozen target, labelled
// training data and evaluation prompts.
struct Benchmark {
  std::shared_ptr<const TargetModel> target;
  std::vector<DistillExample> train;
  std::vector<Sequence> eval_prompts;
  std::string task = "toy";
};

struct BenchmarkSpec {
  std::size_t prompt_len = 16;
  std::size_t gen_len = 48;  // target continuation per distillation example
  double gen_temperature = 1.0;
  std::uint64_t seed = 3;
  std::size_t eval_prompts = 0;  // 0: every held-out sequence
};

// Distillation data from train prefixes, evaluation prompts from held-out
// prefixes.
Benchmark make_benchmark(std::shared_ptr<const TargetModel> target, const Corpus& corpus,
                         const BenchmarkSpec& spec);

// Leading `len` tokens of the first `count` sequences (0: all).
std::vector<Sequence> prompt_prefixes(std::span<const Sequence> seqs, std::size_t len,
                                      std::size_t count = 0);

// Small standalone drafter: next-token training with its own embeddings and
// head.
TargetModel train_vanilla(std::span<const Sequence> corpus, const ModelConfig& config,
                          const TrainOptions& options, TrainLog* log = nullptr);

// Memo of evaluate_drafter results keyed by config, subset size and seed, so
// experiments that share runs train each drafter once.
using RunCache = std::map<std::string, MetricsRecord>;

struct ExperimentOptions {
  TrainOptions train;  // train.seed is replaced per run
  EvalOptions eval;
  std::size_t n_max = 3;
  RunCache* cache = nullptr;
};

// Trains one drafter (seeded) and measures tau and n-alpha.
MetricsRecord evaluate_drafter(const Benchmark& bench, const DraftConfig& config,
                               std::size_t train_count, std::uint64_t seed,
                               const ExperimentOptions& options);

struct AblationRow {
  std::string variant;
  double tau = 0.0;
  double alpha_gap = 0.0;  // alpha_0 - alpha_n_max
  std::vector<MetricsRecord> runs;  // one per seed
};

// Rows: feature regression, multi-round top-layer, multi-round fused.
std::vector<AblationRow> run_ablation(const Benchmark& bench, std::span<const std::uint64_t> seeds,
                                      const ExperimentOptions& options);

struct ScalingPoint {
  std::string variant;
  double fraction = 0.0;
  std::size_t examples = 0;
  double alpha0 = 0.0, alpha1 = 0.0, tau = 0.0;  // means over seeds
  std::vector<MetricsRecord> runs;
};

// Nested prefixes of the training set (fraction in (0, 1]); one drafter per
// (variant, fraction, seed).
std::vector<ScalingPoint> run_scaling(const Benchmark& bench, std::span<const DraftConfig> variants,
                                      std::span<const double> fractions,
                                      std::span<const std::uint64_t> seeds,
                                      const ExperimentOptions& options);

// Number of training examples used for `fraction` of `total`.
std::size_t subset_size(std::size_t total, double fraction);

// ---------------------------------------------------------------------------
// Serialization

std::string metrics_csv_header(std::size_t n_alpha);
std::string to_csv(std::span<const MetricsRecord> records);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& text);
std::string format_double(double v);

}  // namespace sdlab
