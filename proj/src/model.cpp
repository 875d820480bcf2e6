#include "sdlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdlab {

// ---------------------------------------------------------------------------
// ModelConfig

std::array<std::size_t, 3> ModelConfig::default_taps(std::size_t layers) {
  const std::size_t low = (layers + 3) / 4;
  const std::size_t mid = (layers + 1) / 2;
  return {low, mid, layers};
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("config: vocab_size must be >= 2");
  if (hidden == 0 || layers == 0 || heads == 0 || max_seq_len == 0 || mlp_mult == 0) {
    throw std::invalid_argument("config: sizes must be positive");
  }
  if (hidden % heads != 0) throw std::invalid_argument("config: heads must divide hidden");
}

bool ModelConfig::taps_valid() const {
  return layers >= 3 && taps[0] >= 1 && taps[0] < taps[1] && taps[1] < taps[2] &&
         taps[2] <= layers;
}

void ModelConfig::validate_taps() const {
  validate();
  if (!taps_valid()) {
    throw std::invalid_argument("config: taps must satisfy 1 <= low < mid < high <= layers");
  }
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {{"vocab_size", std::to_string(vocab_size)},
          {"hidden", std::to_string(hidden)},
          {"layers", std::to_string(layers)},
          {"heads", std::to_string(heads)},
          {"max_seq_len", std::to_string(max_seq_len)},
          {"mlp_mult", std::to_string(mlp_mult)},
          {"tap_low", std::to_string(taps[0])},
          {"tap_mid", std::to_string(taps[1])},
          {"tap_high", std::to_string(taps[2])}};
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> std::size_t {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("config: missing key ") + key);
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  ModelConfig c;
  c.vocab_size = get("vocab_size");
  c.hidden = get("hidden");
  c.layers = get("layers");
  c.heads = get("heads");
  c.max_seq_len = get("max_seq_len");
  c.mlp_mult = get("mlp_mult");
  c.taps = {get("tap_low"), get("tap_mid"), get("tap_high")};
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// LayerTaps

namespace {

Tensor slice_tensor(const Tensor& t, std::size_t begin, std::size_t count) {
  if (t.size() == 0) return {};
  Tensor out(count, t.cols());
  std::copy_n(t.data.data() + begin * t.cols(), count * t.cols(), out.data.data());
  return out;
}

void append_tensor(Tensor& t, const Tensor& other) {
  if (other.size() == 0) return;
  if (t.size() == 0) {
    t = other;
    return;
  }
  if (t.cols() != other.cols()) throw std::invalid_argument("taps: width mismatch");
  t.data.insert(t.data.end(), other.data.begin(), other.data.end());
  t.shape = {t.rows() + other.rows(), t.cols()};
}

}  // namespace

LayerTaps LayerTaps::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > positions()) throw std::out_of_range("taps: slice out of range");
  return {slice_tensor(low, begin, count), slice_tensor(mid, begin, count),
          slice_tensor(high, begin, count), slice_tensor(top, begin, count)};
}

void LayerTaps::append(const LayerTaps& other) {
  append_tensor(low, other.low);
  append_tensor(mid, other.mid);
  append_tensor(high, other.high);
  append_tensor(top, other.top);
}

// ---------------------------------------------------------------------------
// KvCache

KvCache::KvCache(std::size_t layers, std::size_t width, std::size_t capacity)
    : keys_(layers, Tensor(0, width)),
      values_(layers, Tensor(0, width)),
      width_(width),
      capacity_(capacity) {}

void KvCache::append(const std::vector<Tensor>& keys, const std::vector<Tensor>& values) {
  if (keys.size() != keys_.size() || values.size() != values_.size()) {
    throw std::invalid_argument("kv cache: layer count mismatch");
  }
  const std::size_t rows = keys.empty() ? 0 : keys[0].rows();
  if (length_ + rows > capacity_) throw std::length_error("kv cache: capacity exceeded");
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    if (keys[l].rows() != rows || values[l].rows() != rows || keys[l].cols() != width_) {
      throw std::invalid_argument("kv cache: row count mismatch across layers");
    }
    keys_[l].data.insert(keys_[l].data.end(), keys[l].data.begin(), keys[l].data.end());
    values_[l].data.insert(values_[l].data.end(), values[l].data.begin(), values[l].data.end());
    keys_[l].shape = {length_ + rows, width_};
    values_[l].shape = {length_ + rows, width_};
  }
  length_ += rows;
}

void KvCache::truncate(std::size_t length) {
  if (length > length_) throw std::out_of_range("kv cache: cannot truncate forward");
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    keys_[l].data.resize(length * width_);
    values_[l].data.resize(length * width_);
    keys_[l].shape = {length, width_};
    values_[l].shape = {length, width_};
  }
  length_ = length;
}

void KvCache::keep_rows(std::span<const std::size_t> rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= length_ || (i > 0 && rows[i] <= rows[i - 1])) {
      throw std::invalid_argument("kv cache: keep_rows needs increasing in-range rows");
    }
  }
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] == i) continue;
      std::copy_n(keys_[l].data.begin() + rows[i] * width_, width_, keys_[l].data.begin() + i * width_);
      std::copy_n(values_[l].data.begin() + rows[i] * width_, width_,
                  values_[l].data.begin() + i * width_);
    }
  }
  truncate(rows.size());
}

bool KvCache::operator==(const KvCache& other) const {
  return length_ == other.length_ && keys_.size() == other.keys_.size() &&
         std::equal(keys_.begin(), keys_.end(), other.keys_.begin(),
                    [](const Tensor& a, const Tensor& b) { return a.data == b.data; }) &&
         std::equal(values_.begin(), values_.end(), other.values_.begin(),
                    [](const Tensor& a, const Tensor& b) { return a.data == b.data; });
}

// ---------------------------------------------------------------------------
// Blocks

Tensor init_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = stddev * rng.normal();
  return t;
}

BlockParams add_block_params(ParamStore& store, const std::string& prefix, std::size_t width,
                             std::size_t mlp_mult, std::size_t depth_scale, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  const double s_out = s / std::sqrt(2.0 * static_cast<double>(depth_scale));
  const std::size_t inner = width * mlp_mult;
  BlockParams p;
  p.attn_norm = &store.add(prefix + ".attn_norm", Tensor(1, width, 1.0));
  p.wq = &store.add(prefix + ".wq", init_matrix(width, width, s, rng));
  p.wk = &store.add(prefix + ".wk", init_matrix(width, width, s, rng));
  p.wv = &store.add(prefix + ".wv", init_matrix(width, width, s, rng));
  p.wo = &store.add(prefix + ".wo", init_matrix(width, width, s_out, rng));
  p.mlp_norm = &store.add(prefix + ".mlp_norm", Tensor(1, width, 1.0));
  p.w1 = &store.add(prefix + ".w1", init_matrix(width, inner, s, rng));
  p.w2 = &store.add(prefix + ".w2",
                    init_matrix(inner, width, s_out * std::sqrt(1.0 / mlp_mult), rng));
  return p;
}

BlockOutput block_forward(Graph& g, const BlockParams& p, Value x, Value past_keys,
                          Value past_values, const AttentionMask& mask, int heads,
                          bool trainable) {
  auto use = [&](Parameter* param) { return trainable ? g.param(*param) : g.constant_ref(param->value); };
  const Value h = ad::rms_norm(g, x, use(p.attn_norm));
  const Value q = ad::matmul(g, h, use(p.wq));
  const Value k = ad::matmul(g, h, use(p.wk));
  const Value v = ad::matmul(g, h, use(p.wv));
  Value keys = k, values = v;
  if (past_keys.valid()) {
    const Value kparts[] = {past_keys, k};
    const Value vparts[] = {past_values, v};
    keys = ad::concat_rows(g, kparts);
    values = ad::concat_rows(g, vparts);
  }
  const Value att = ad::attention(g, q, keys, values, mask, heads);
  const Value x1 = ad::add(g, x, ad::matmul(g, att, use(p.wo)));
  const Value h2 = ad::rms_norm(g, x1, use(p.mlp_norm));
  const Value mlp = ad::matmul(g, ad::silu(g, ad::matmul(g, h2, use(p.w1))), use(p.w2));
  return {ad::add(g, x1, mlp), k, v};
}

// ---------------------------------------------------------------------------
// TargetModel

TargetModel::TargetModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t k = config_.hidden;
  tok_emb_ = &params_.add("tok_emb", init_matrix(config_.vocab_size, k, 1.0, rng));
  pos_emb_ = &params_.add("pos_emb", init_matrix(config_.max_seq_len, k, 0.1, rng));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    blocks_.push_back(add_block_params(params_, "layer" + std::to_string(l), k, config_.mlp_mult,
                                       config_.layers, rng));
  }
  final_norm_ = &params_.add("final_norm", Tensor(1, k, 1.0));
  lm_head_ = &params_.add("lm_head",
                          init_matrix(k, config_.vocab_size, 1.0 / std::sqrt(double(k)), rng));
}

KvCache TargetModel::make_cache() const {
  return KvCache(config_.layers, config_.hidden, config_.max_seq_len);
}

TargetModel::Output TargetModel::forward(std::span<const Token> tokens, KvCache& cache,
                                         const AttentionMask* mask,
                                         std::span<const std::size_t> positions) const {
  const std::size_t n = tokens.size();
  if (n == 0) throw std::invalid_argument("forward: no tokens");
  const std::size_t past = cache.length();
  if (past + n > config_.max_seq_len) throw std::length_error("forward: max_seq_len exceeded");
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  if (pos.empty()) {
    for (std::size_t i = 0; i < n; ++i) pos.push_back(past + i);
  } else if (pos.size() != n) {
    throw std::invalid_argument("forward: positions length mismatch");
  }
  for (std::size_t p : pos) {
    if (p >= config_.max_seq_len) throw std::length_error("forward: position exceeds max_seq_len");
  }
  AttentionMask causal;
  if (!mask) {
    causal = AttentionMask::causal(n, past);
    mask = &causal;
  } else if (mask->queries != n || mask->keys != past + n) {
    throw std::invalid_argument("forward: mask shape mismatch");
  }
  std::vector<std::size_t> ids(tokens.begin(), tokens.end());
  for (std::size_t id : ids) {
    if (id >= config_.vocab_size) throw std::out_of_range("forward: token out of vocabulary");
  }

  Graph g(false);
  Value x = ad::add(g, ad::gather_rows(g, g.constant_ref(tok_emb_->value), ids),
                    ad::gather_rows(g, g.constant_ref(pos_emb_->value), pos));
  std::vector<Value> hidden;
  std::vector<Tensor> new_k, new_v;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Value pk, pv;
    if (past > 0) {
      pk = g.constant_ref(cache.keys(l));
      pv = g.constant_ref(cache.values(l));
    }
    const BlockOutput out =
        block_forward(g, blocks_[l], x, pk, pv, *mask, static_cast<int>(config_.heads), false);
    x = out.out;
    hidden.push_back(x);
    new_k.push_back(g.value(out.keys));
    new_v.push_back(g.value(out.values));
  }
  const Value top = ad::rms_norm(g, x, g.constant_ref(final_norm_->value));
  const Value logits = ad::matmul(g, top, g.constant_ref(lm_head_->value));
  cache.append(new_k, new_v);

  Output result;
  result.logits = g.value(logits);
  result.taps.top = g.value(top);
  if (config_.taps_valid()) {
    result.taps.low = g.value(hidden[config_.taps[0] - 1]);
    result.taps.mid = g.value(hidden[config_.taps[1] - 1]);
    result.taps.high = g.value(hidden[config_.taps[2] - 1]);
  }
  return result;
}

TargetModel::GraphOutput TargetModel::build(Graph& g, std::span<const Token> tokens) {
  const std::size_t n = tokens.size();
  if (n == 0 || n > config_.max_seq_len) throw std::length_error("build: bad sequence length");
  std::vector<std::size_t> ids(tokens.begin(), tokens.end());
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = i;
  Value x = ad::add(g, ad::gather_rows(g, g.param(*tok_emb_), ids),
                    ad::gather_rows(g, g.param(*pos_emb_), pos));
  const AttentionMask mask = AttentionMask::causal(n);
  for (const BlockParams& b : blocks_) {
    x = block_forward(g, b, x, Value{}, Value{}, mask, static_cast<int>(config_.heads), true).out;
  }
  const Value top = ad::rms_norm(g, x, g.param(*final_norm_));
  return {ad::matmul(g, top, g.param(*lm_head_)), top};
}

double TargetModel::flops_per_token(std::size_t context) const {
  const double k = static_cast<double>(config_.hidden);
  const double inner = k * static_cast<double>(config_.mlp_mult);
  const double per_layer = 2.0 * (4.0 * k * k + 2.0 * k * inner) + 4.0 * static_cast<double>(context) * k;
  return static_cast<double>(config_.layers) * per_layer +
         2.0 * k * static_cast<double>(config_.vocab_size);
}

// ---------------------------------------------------------------------------
// Free functions

std::vector<Token> generate(const TargetModel& model, std::span<const Token> prompt,
                            std::size_t n, double temperature, Rng* rng) {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (temperature < 0.0) throw std::invalid_argument("generate: negative temperature");
  if (temperature > 0.0 && !rng) throw std::invalid_argument("generate: rng required when T > 0");
  if (prompt.size() + n > model.config().max_seq_len) {
    throw std::length_error("generate: max_seq_len exceeded");
  }
  KvCache cache = model.make_cache();
  std::vector<Token> out;
  auto next = [&](const Tensor& logits) {
    const auto row = logits.row_span(logits.rows() - 1);
    return temperature == 0.0 ? greedy(row) : sample(Dist::from_logits(row, temperature), *rng);
  };
  if (n == 0) return out;
  auto res = model.forward(prompt, cache);
  out.push_back(next(res.logits));
  while (out.size() < n) {
    const Token t = out.back();
    res = model.forward(std::span<const Token>(&t, 1), cache);
    out.push_back(next(res.logits));
  }
  return out;
}

double next_token_loss(const TargetModel& model, std::span<const std::vector<Token>> seqs) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : seqs) {
    if (s.size() < 2) continue;
    KvCache cache = model.make_cache();
    const auto out = model.forward(std::span<const Token>(s.data(), s.size() - 1), cache);
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const auto lp = log_softmax(out.logits.row_span(i));
      total -= lp[s[i + 1]];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("next_token_loss: no predictions");
  return total / static_cast<double>(count);
}

double greedy_accuracy(const TargetModel& model, std::span<const std::vector<Token>> seqs) {
  std::size_t hit = 0, count = 0;
  for (const auto& s : seqs) {
    if (s.size() < 2) continue;
    KvCache cache = model.make_cache();
    const auto out = model.forward(std::span<const Token>(s.data(), s.size() - 1), cache);
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      hit += greedy(out.logits.row_span(i)) == s[i + 1] ? 1 : 0;
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("greedy_accuracy: no predictions");
  return static_cast<double>(hit) / static_cast<double>(count);
}

}  // namespace sdlab
