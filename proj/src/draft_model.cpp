#include "sdlab/draft_model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sdlab {

std::string to_string(DraftKind kind) {
  switch (kind) {
    case DraftKind::kFused: return "fused";
    case DraftKind::kTopLayer: return "top-layer";
    case DraftKind::kFeature: return "feature";
  }
  return "unknown";
}

DraftKind draft_kind_from_string(const std::string& s) {
  if (s == "fused") return DraftKind::kFused;
  if (s == "top-layer") return DraftKind::kTopLayer;
  if (s == "feature") return DraftKind::kFeature;
  throw std::invalid_argument("unknown draft kind: " + s);
}

void DraftConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("draft config: rounds must be >= 1");
  if (kind == DraftKind::kFeature && rounds != 1) {
    throw std::invalid_argument("draft config: feature regression drafts train with rounds = 1");
  }
  if (w_token < 0.0) throw std::invalid_argument("draft config: w_token must be >= 0");
  if (smooth_l1_beta <= 0.0) throw std::invalid_argument("draft config: smooth_l1_beta must be > 0");
}

std::map<std::string, std::string> DraftConfig::to_kv() const {
  auto d = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{"draft.kind", to_string(kind)},
          {"draft.rounds", std::to_string(rounds)},
          {"draft.soft_targets", soft_targets ? "1" : "0"},
          {"draft.w_token", d(w_token)},
          {"draft.smooth_l1_beta", d(smooth_l1_beta)}};
}

DraftConfig DraftConfig::from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("draft config: missing key ") + key);
    return it->second;
  };
  DraftConfig c;
  c.kind = draft_kind_from_string(get("draft.kind"));
  c.rounds = std::stoull(get("draft.rounds"));
  c.soft_targets = get("draft.soft_targets") == "1";
  c.w_token = std::stod(get("draft.w_token"));
  c.smooth_l1_beta = std::stod(get("draft.smooth_l1_beta"));
  c.validate();
  return c;
}

AttentionMask build_ttt_mask(std::size_t prefix_len, std::size_t rounds) {
  const std::size_t n = prefix_len * rounds;
  AttentionMask mask(n, n);
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < prefix_len; ++i) {
      const std::size_t q = r * prefix_len + i;
      for (std::size_t j = 0; j <= i; ++j) mask.set(q, j);
      for (std::size_t rr = 1; rr <= r; ++rr) mask.set(q, rr * prefix_len + i);
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// FeatureDraftModel

FeatureDraftModel::FeatureDraftModel(std::shared_ptr<const TargetModel> target,
                                     DraftConfig config, std::uint64_t seed)
    : target_(std::move(target)), config_(config) {
  if (!target_) throw std::invalid_argument("draft model: null target");
  config_.validate();
  const ModelConfig& tc = target_->config();
  if (config_.kind == DraftKind::kFused) tc.validate_taps();
  const std::size_t k = tc.hidden;
  Rng rng(seed);
  if (config_.kind != DraftKind::kFeature) {
    const std::size_t in = config_.kind == DraftKind::kFused ? 3 * k : k;
    fuse_w_ = &params_.add("fuse.w", init_matrix(in, k, 1.0 / std::sqrt(double(in)), rng));
    fuse_b_ = &params_.add("fuse.b", Tensor(1, k, 0.0));
  }
  in_w_ = &params_.add("in.w", init_matrix(2 * k, k, 1.0 / std::sqrt(2.0 * double(k)), rng));
  in_b_ = &params_.add("in.b", Tensor(1, k, 0.0));
  block_ = add_block_params(params_, "block", k, tc.mlp_mult, 1, rng);
  out_norm_ = &params_.add("out_norm", Tensor(1, k, 1.0));
}

KvCache FeatureDraftModel::make_cache() const {
  return KvCache(1, target_->config().hidden, target_->config().max_seq_len);
}

Value FeatureDraftModel::fuse(Graph& g, const LayerTaps& taps, std::size_t begin,
                              std::size_t count, bool trainable) const {
  const std::size_t k = target_->config().hidden;
  const LayerTaps part = taps.slice(begin, count);
  if (config_.kind == DraftKind::kFeature) return g.constant(part.top);
  Value x;
  if (config_.kind == DraftKind::kFused) {
    if (part.low.size() == 0 || part.low.cols() != k || part.mid.cols() != k ||
        part.high.cols() != k) {
      throw std::invalid_argument("fuse: taps must be three k-wide features");
    }
    const Value parts[] = {g.constant(part.low), g.constant(part.mid), g.constant(part.high)};
    x = ad::concat_cols(g, parts);
  } else {
    if (part.top.cols() != k) throw std::invalid_argument("fuse: top feature must be k wide");
    x = g.constant(part.top);
  }
  auto use = [&](Parameter* p) { return trainable ? g.param(*p) : g.constant_ref(p->value); };
  return ad::add_bias(g, ad::matmul(g, x, use(fuse_w_)), use(fuse_b_));
}

Tensor FeatureDraftModel::fuse(const LayerTaps& taps) const {
  Graph g(false);
  return g.value(fuse(g, taps, 0, taps.positions(), false));
}

FeatureDraftModel::Rows FeatureDraftModel::build_rows(Graph& g, Value features,
                                                      std::span<const Token> tokens,
                                                      std::span<const std::size_t> positions,
                                                      Value past_keys, Value past_values,
                                                      const AttentionMask& mask,
                                                      bool trainable) const {
  const ModelConfig& tc = target_->config();
  if (tokens.size() != positions.size() || g.value(features).rows() != tokens.size()) {
    throw std::invalid_argument("draft rows: features, tokens and positions must align");
  }
  if (g.value(features).cols() != tc.hidden) throw std::invalid_argument("draft rows: bad feature width");
  std::vector<std::size_t> ids(tokens.begin(), tokens.end());
  for (std::size_t id : ids) {
    if (id >= tc.vocab_size) throw std::out_of_range("draft rows: token out of vocabulary");
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  for (std::size_t p : pos) {
    if (p >= tc.max_seq_len) throw std::length_error("draft rows: position exceeds max_seq_len");
  }
  auto use = [&](Parameter* p) { return trainable ? g.param(*p) : g.constant_ref(p->value); };
  const Value emb = ad::gather_rows(g, g.constant_ref(target_->token_embedding().value), ids);
  const Value parts[] = {features, emb};
  Value x = ad::add_bias(g, ad::matmul(g, ad::concat_cols(g, parts), use(in_w_)), use(in_b_));
  x = ad::add(g, x, ad::gather_rows(g, g.constant_ref(target_->position_embedding().value), pos));
  const BlockOutput blk = block_forward(g, block_, x, past_keys, past_values, mask,
                                        static_cast<int>(tc.heads), trainable);
  const Value a = ad::rms_norm(g, blk.out, use(out_norm_));
  const Value logits = ad::matmul(g, a, g.constant_ref(target_->lm_head().value));
  return {a, logits, blk.keys, blk.values};
}

FeatureDraftModel::StepOutput FeatureDraftModel::step(const Tensor& features,
                                                      std::span<const Token> tokens,
                                                      std::span<const std::size_t> positions,
                                                      KvCache& cache,
                                                      const AttentionMask* mask) const {
  const std::size_t n = tokens.size();
  if (n == 0) throw std::invalid_argument("draft step: no rows");
  const std::size_t past = cache.length();
  if (past + n > cache.capacity()) throw std::length_error("draft step: cache capacity exceeded");
  AttentionMask causal;
  if (!mask) {
    causal = AttentionMask::causal(n, past);
    mask = &causal;
  } else if (mask->queries != n || mask->keys != past + n) {
    throw std::invalid_argument("draft step: mask shape mismatch");
  }
  Graph g(false);
  Value pk, pv;
  if (past > 0) {
    pk = g.constant_ref(cache.keys(0));
    pv = g.constant_ref(cache.values(0));
  }
  const Rows rows = build_rows(g, g.constant_ref(features), tokens, positions, pk, pv, *mask, false);
  cache.append({g.value(rows.keys)}, {g.value(rows.values)});
  return {g.value(rows.states), g.value(rows.logits)};
}

double FeatureDraftModel::step_flops(std::size_t context) const {
  const ModelConfig& tc = target_->config();
  const double k = static_cast<double>(tc.hidden);
  const double inner = k * static_cast<double>(tc.mlp_mult);
  return 2.0 * 2.0 * k * k + 2.0 * (4.0 * k * k + 2.0 * k * inner) +
         4.0 * static_cast<double>(context) * k + 2.0 * k * static_cast<double>(tc.vocab_size);
}

// ---------------------------------------------------------------------------
// Sessions

FeatureDrafter::FeatureDrafter(std::shared_ptr<const FeatureDraftModel> model, std::string id)
    : model_(std::move(model)), id_(std::move(id)) {
  if (!model_) throw std::invalid_argument("feature drafter: null model");
  if (id_.empty()) id_ = to_string(model_->config().kind);
}

std::unique_ptr<DraftSession> FeatureDrafter::start(std::uint64_t) const {
  return std::make_unique<FeatureDraftSession>(*model_);
}

FeatureDraftSession::FeatureDraftSession(const FeatureDraftModel& model)
    : model_(model), cache_(model.make_cache()) {}

DraftOutput FeatureDraftSession::sync(std::span<const Token> committed, const LayerTaps& new_taps) {
  discard_speculation();
  const std::size_t rows = new_taps.positions();
  if (committed.size() != committed_ + rows + 1) {
    throw std::invalid_argument("draft sync: taps do not match the committed history");
  }
  if (rows == 0) {
    if (committed_ == 0) throw std::invalid_argument("draft sync: no target features yet");
    return root_;
  }
  const Tensor features = model_.fuse(new_taps);
  std::vector<std::size_t> positions(rows);
  for (std::size_t i = 0; i < rows; ++i) positions[i] = committed_ + 1 + i;
  const auto out = model_.step(features, committed.subspan(committed_ + 1, rows), positions, cache_);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto s = out.states.row_span(i);
    states_.emplace_back(s.begin(), s.end());
    pos_.push_back(positions[i]);
  }
  committed_ += rows;
  const auto last = out.logits.row_span(rows - 1);
  root_.logits.assign(last.begin(), last.end());
  root_.handle = committed_ - 1;
  return root_;
}

std::vector<DraftOutput> FeatureDraftSession::expand(std::span<const DraftRequest> requests) {
  if (requests.empty()) return {};
  const std::size_t past = cache_.length();
  const AttentionMask mask = speculative_mask(committed_, past, requests);
  const std::size_t k = model_.target().config().hidden;
  Tensor features(requests.size(), k);
  std::vector<Token> tokens;
  std::vector<std::size_t> positions;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const std::size_t parent = requests[r].parent;
    if (parent >= past) throw std::invalid_argument("draft expand: unknown parent");
    std::copy(states_[parent].begin(), states_[parent].end(), features.row_span(r).begin());
    tokens.push_back(requests[r].token);
    positions.push_back(pos_[parent] + 1);
  }
  const auto out = model_.step(features, tokens, positions, cache_, &mask);
  last_inputs_ = features;
  std::vector<DraftOutput> result;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto s = out.states.row_span(r);
    states_.emplace_back(s.begin(), s.end());
    pos_.push_back(positions[r]);
    const auto row = out.logits.row_span(r);
    result.push_back({std::vector<double>(row.begin(), row.end()), past + r});
  }
  return result;
}

void FeatureDraftSession::discard_speculation() {
  cache_.truncate(committed_);
  states_.resize(committed_);
  pos_.resize(committed_);
}

std::span<const double> FeatureDraftSession::state(std::size_t handle) const {
  if (handle >= states_.size()) throw std::out_of_range("draft session: unknown handle");
  return states_[handle];
}

// ---------------------------------------------------------------------------
// Training

DistillExample distill_example(const TargetModel& target, const Sequence& tokens) {
  if (tokens.empty()) throw std::invalid_argument("distill: empty sequence");
  KvCache cache = target.make_cache();
  auto out = target.forward(tokens, cache);
  DistillExample ex;
  ex.tokens = tokens;
  ex.taps = std::move(out.taps);
  ex.teacher = Tensor(tokens.size(), target.config().vocab_size);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto p = softmax(out.logits.row_span(i), 1.0);
    std::copy(p.begin(), p.end(), ex.teacher.row_span(i).begin());
  }
  return ex;
}

std::vector<DistillExample> make_distill_set(const TargetModel& target,
                                             std::span<const Sequence> prompts,
                                             std::size_t gen_len, double temperature,
                                             std::uint64_t seed) {
  std::vector<DistillExample> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    Sequence seq = prompts[i];
    const auto gen = generate(target, prompts[i], gen_len, temperature, &rng);
    seq.insert(seq.end(), gen.begin(), gen.end());
    out.push_back(distill_example(target, seq));
  }
  return out;
}

namespace {

Tensor row_block(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out(count, t.cols());
  std::copy_n(t.data.data() + begin * t.cols(), count * t.cols(), out.data.data());
  return out;
}

Tensor one_hot_targets(std::span<const Token> tokens, std::size_t vocab) {
  Tensor out(tokens.size(), vocab);
  for (std::size_t i = 0; i < tokens.size(); ++i) out.at(i, tokens[i]) = 1.0;
  return out;
}

}  // namespace

Value draft_loss(Graph& g, FeatureDraftModel& model, const DistillExample& ex) {
  const DraftConfig& cfg = model.config();
  const std::size_t n = ex.tokens.size();
  const std::size_t vocab = model.target().config().vocab_size;
  const std::size_t rounds = cfg.rounds;
  const std::size_t lookahead = cfg.soft_targets ? rounds : rounds + 1;
  if (n <= lookahead) throw std::invalid_argument("draft loss: sequence too short for rounds");
  const std::size_t m = n - lookahead;  // queries per round

  auto targets = [&](std::size_t offset) {
    // Row i supervises the token at position i + 1 + offset.
    if (cfg.soft_targets) return row_block(ex.teacher, offset, m);
    return one_hot_targets(std::span<const Token>(ex.tokens).subspan(offset + 1, m), vocab);
  };

  if (cfg.kind == DraftKind::kFeature) {
    const Value feats = model.fuse(g, ex.taps, 0, m, true);
    std::vector<std::size_t> pos(m);
    for (std::size_t i = 0; i < m; ++i) pos[i] = i + 1;
    const auto rows =
        model.build_rows(g, feats, std::span<const Token>(ex.tokens).subspan(1, m), pos, Value{},
                         Value{}, AttentionMask::causal(m), true);
    const Value fea = ad::smooth_l1(g, rows.states, row_block(ex.taps.top, 1, m), cfg.smooth_l1_beta);
    const Value tok = ad::cross_entropy(g, rows.logits, targets(1));
    return ad::add(g, fea, ad::scale(g, tok, cfg.w_token));
  }

  const AttentionMask full = build_ttt_mask(m, rounds);
  Value features = model.fuse(g, ex.taps, 0, m, true);
  std::vector<Value> keys, values;
  Value loss;
  for (std::size_t r = 0; r < rounds; ++r) {
    AttentionMask mask(m, (r + 1) * m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < (r + 1) * m; ++j) {
        if (full.allowed(r * m + i, j)) mask.set(i, j);
      }
    }
    std::vector<std::size_t> pos(m);
    for (std::size_t i = 0; i < m; ++i) pos[i] = i + 1 + r;
    Value pk, pv;
    if (r > 0) {
      pk = ad::concat_rows(g, keys);
      pv = ad::concat_rows(g, values);
    }
    const auto rows = model.build_rows(g, features, std::span<const Token>(ex.tokens).subspan(1 + r, m),
                                       pos, pk, pv, mask, true);
    keys.push_back(rows.keys);
    values.push_back(rows.values);
    const Value ce = ad::cross_entropy(g, rows.logits, targets(1 + r));
    loss = loss.valid() ? ad::add(g, loss, ce) : ce;
    features = rows.states;
  }
  return loss;
}

std::unique_ptr<FeatureDraftModel> train_feature_draft(std::shared_ptr<const TargetModel> target,
                                                       const DraftConfig& config,
                                                       std::span<const DistillExample> data,
                                                       const TrainOptions& options,
                                                       TrainLog* log) {
  if (data.empty()) throw std::invalid_argument("train draft: empty training set");
  auto model = std::make_unique<FeatureDraftModel>(std::move(target), config,
                                                   derive_seed(options.seed, 1));
  AdamW opt(model->params().trainable(), options.adam);
  BatchSchedule schedule(data.size(), derive_seed(options.seed, 2));
  const std::size_t batch = std::max<std::size_t>(1, options.batch);
  TrainLog local;
  for (std::size_t step = 0; step < options.steps; ++step) {
    double total = 0.0;
    for (std::size_t idx : schedule.next(batch)) {
      Graph g;
      const Value loss = draft_loss(g, *model, data[idx]);
      g.backward(ad::scale(g, loss, 1.0 / static_cast<double>(batch)));
      total += g.value(loss).data[0];
    }
    opt.step(scheduled_lr(options.adam.lr, step, options.steps, options.warmup));
    local.step_loss.push_back(total / static_cast<double>(batch));
  }
  if (!local.step_loss.empty()) {
    local.initial_loss = local.step_loss.front();
    local.final_loss = local.step_loss.back();
  }
  if (log) *log = std::move(local);
  return model;
}

}  // namespace sdlab
