#include "sdlab/run_config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sdlab {

namespace {

enum class Type { kSize, kU64, kDouble, kBool, kString, kDoubles, kU64s };

struct Key {
  const char* name;
  Type type;
  const char* value;
};

// clang-format off
const Key kSchema[] = {
    {"model.vocab_size", Type::kSize, "64"},
    {"model.hidden", Type::kSize, "32"},
    {"model.layers", Type::kSize, "4"},
    {"model.heads", Type::kSize, "4"},
    {"model.max_seq_len", Type::kSize, "512"},
    {"model.mlp_mult", Type::kSize, "4"},
    {"model.tap_low", Type::kSize, "0"},  // 0: derived from the layer count
    {"model.tap_mid", Type::kSize, "0"},
    {"model.tap_high", Type::kSize, "0"},

    {"corpus.seed", Type::kU64, "7"},
    {"corpus.period", Type::kSize, "8"},
    {"corpus.num_patterns", Type::kSize, "8"},
    {"corpus.noise", Type::kDouble, "0.05"},
    {"corpus.w_cycle", Type::kDouble, "0"},
    {"corpus.w_copy", Type::kDouble, "0"},
    {"corpus.w_markov", Type::kDouble, "0"},
    {"corpus.w_interleave", Type::kDouble, "1"},
    {"corpus.branching", Type::kSize, "3"},
    {"corpus.markov_decay", Type::kDouble, "0.35"},
    {"corpus.num_sequences", Type::kSize, "1024"},
    {"corpus.seq_len", Type::kSize, "64"},
    {"corpus.heldout_fraction", Type::kDouble, "0.125"},

    {"target.steps", Type::kSize, "1000"},
    {"target.batch", Type::kSize, "8"},
    {"target.warmup", Type::kSize, "20"},
    {"target.seed", Type::kU64, "1"},
    {"target.lr", Type::kDouble, "0.003"},
    {"target.beta1", Type::kDouble, "0.9"},
    {"target.beta2", Type::kDouble, "0.95"},
    {"target.weight_decay", Type::kDouble, "0"},
    {"target.clip", Type::kDouble, "0.5"},

    {"vanilla.hidden", Type::kSize, "32"},
    {"vanilla.layers", Type::kSize, "1"},
    {"vanilla.heads", Type::kSize, "4"},

    {"draft.method", Type::kString, "fused"},  // fused | top-layer | feature | vanilla
    {"draft.rounds", Type::kSize, "3"},
    {"draft.soft_targets", Type::kBool, "1"},
    {"draft.w_token", Type::kDouble, "0.1"},
    {"draft.smooth_l1_beta", Type::kDouble, "1"},
    {"draft.steps", Type::kSize, "600"},
    {"draft.batch", Type::kSize, "8"},
    {"draft.warmup", Type::kSize, "20"},
    {"draft.seed", Type::kU64, "100"},
    {"draft.lr", Type::kDouble, "0.003"},
    {"draft.beta1", Type::kDouble, "0.9"},
    {"draft.beta2", Type::kDouble, "0.95"},
    {"draft.weight_decay", Type::kDouble, "0"},
    {"draft.clip", Type::kDouble, "0.5"},

    {"data.prompt_len", Type::kSize, "16"},
    {"data.gen_len", Type::kSize, "48"},
    {"data.gen_temperature", Type::kDouble, "1"},
    {"data.seed", Type::kU64, "3"},

    {"decode.temperature", Type::kDouble, "0"},
    {"decode.use_tree", Type::kBool, "0"},
    {"decode.depth", Type::kSize, "4"},
    {"decode.max_new_tokens", Type::kSize, "64"},
    {"tree.total_tokens", Type::kSize, "16"},
    {"tree.depth", Type::kSize, "5"},
    {"tree.expand_k", Type::kSize, "3"},
    {"tree.children", Type::kSize, "3"},

    {"bench.drafters", Type::kString, "identity,fused"},
    {"bench.tasks", Type::kString, "heldout"},  // heldout | shifted
    {"bench.shifted_noise", Type::kDouble, "0.15"},
    {"bench.prompts", Type::kSize, "0"},  // 0: every held-out prompt
    {"bench.seed", Type::kU64, "0"},
    {"bench.n_max", Type::kSize, "3"},
    {"bench.c_overhead", Type::kDouble, "0"},
    {"bench.trace", Type::kBool, "0"},
    {"bench.dump_trees", Type::kBool, "0"},

    {"experiment.seeds", Type::kU64s, "100,101,102,103,104"},
    {"experiment.fractions", Type::kDoubles, "0.125,0.25,0.5,1"},
    {"experiment.scaling_seeds", Type::kU64s, "100,101,102"},
    {"experiment.prompts", Type::kSize, "128"},

    {"verify.pairs", Type::kSize, "20"},
    {"verify.vocab", Type::kSize, "4"},
    {"verify.depth", Type::kSize, "3"},
    {"verify.length", Type::kSize, "4"},
    {"verify.temperature", Type::kDouble, "1"},
    {"verify.tolerance", Type::kDouble, "1e-9"},
    {"verify.seed", Type::kU64, "11"},
    {"verify.greedy_prompts", Type::kSize, "16"},

    {"paths.target", Type::kString, "target.ckpt"},
};
// clang-format on

const Key* find_key(const std::string& name) {
  for (const Key& k : kSchema) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s[0] == '-' || s[0] == '+') return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtoull(s.c_str(), &end, 10);
  return errno == 0 && *end == '\0';
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && *end == '\0';
}

bool type_ok(Type type, const std::string& v) {
  std::uint64_t u;
  double d;
  switch (type) {
    case Type::kSize:
    case Type::kU64:
      return parse_u64(v, u);
    case Type::kDouble:
      return parse_double(v, d);
    case Type::kBool:
      return v == "0" || v == "1" || v == "true" || v == "false";
    case Type::kString:
      return true;
    case Type::kDoubles:
      for (const auto& item : split_list(v)) {
        if (!parse_double(item, d)) return false;
      }
      return true;
    case Type::kU64s:
      for (const auto& item : split_list(v)) {
        if (!parse_u64(item, u)) return false;
      }
      return true;
  }
  return false;
}

}  // namespace

RunConfig::RunConfig() {
  for (const Key& k : kSchema) values_[k.name] = k.value;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Key& k : kSchema) out.emplace_back(k.name);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("config: unknown key '" + key + "'");
  if (!type_ok(k->type, value)) {
    throw ConfigError("config: bad value '" + value + "' for key '" + key + "'");
  }
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: expected key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_text(const std::string& text) {
  std::stringstream ss(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config: bad section header on line " + std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value on line " + std::to_string(lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    set(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_u64(get(key), v)) throw ConfigError("config: '" + key + "' is not an integer");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_double(get(key), v)) throw ConfigError("config: '" + key + "' is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  return v == "1" || v == "true";
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  return split_list(get(key));
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(key)) {
    double v = 0.0;
    if (!parse_double(item, v)) throw ConfigError("config: bad list entry in '" + key + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::get_u64s(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& item : get_list(key)) {
    std::uint64_t v = 0;
    if (!parse_u64(item, v)) throw ConfigError("config: bad list entry in '" + key + "'");
    out.push_back(v);
  }
  return out;
}

ModelConfig RunConfig::target_model() const {
  ModelConfig c;
  c.vocab_size = get_size("model.vocab_size");
  c.hidden = get_size("model.hidden");
  c.layers = get_size("model.layers");
  c.heads = get_size("model.heads");
  c.max_seq_len = get_size("model.max_seq_len");
  c.mlp_mult = get_size("model.mlp_mult");
  c.taps = ModelConfig::default_taps(c.layers);
  const std::array<std::size_t, 3> given = {get_size("model.tap_low"), get_size("model.tap_mid"),
                                            get_size("model.tap_high")};
  for (std::size_t i = 0; i < 3; ++i) {
    if (given[i] != 0) c.taps[i] = given[i];
  }
  try {
    c.validate();
    if (given[0] != 0 || given[1] != 0 || given[2] != 0) c.validate_taps();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ModelConfig RunConfig::vanilla_model() const {
  ModelConfig c = target_model();
  c.hidden = get_size("vanilla.hidden");
  c.layers = get_size("vanilla.layers");
  c.heads = get_size("vanilla.heads");
  c.taps = ModelConfig::default_taps(c.layers);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

CorpusSpec RunConfig::corpus() const {
  CorpusSpec s;
  s.seed = get_u64("corpus.seed");
  s.vocab_size = get_size("model.vocab_size");
  s.period = get_size("corpus.period");
  s.num_patterns = get_size("corpus.num_patterns");
  s.noise = get_double("corpus.noise");
  s.w_cycle = get_double("corpus.w_cycle");
  s.w_copy = get_double("corpus.w_copy");
  s.w_markov = get_double("corpus.w_markov");
  s.w_interleave = get_double("corpus.w_interleave");
  s.branching = get_size("corpus.branching");
  s.markov_decay = get_double("corpus.markov_decay");
  s.num_sequences = get_size("corpus.num_sequences");
  s.seq_len = get_size("corpus.seq_len");
  s.heldout_fraction = get_double("corpus.heldout_fraction");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

namespace {

TrainOptions train_options(const RunConfig& c, const std::string& p) {
  TrainOptions o;
  o.steps = c.get_size(p + "steps");
  o.batch = c.get_size(p + "batch");
  o.warmup = c.get_size(p + "warmup");
  o.seed = c.get_u64(p + "seed");
  o.adam.lr = c.get_double(p + "lr");
  o.adam.beta1 = c.get_double(p + "beta1");
  o.adam.beta2 = c.get_double(p + "beta2");
  o.adam.weight_decay = c.get_double(p + "weight_decay");
  o.adam.clip = c.get_double(p + "clip");
  if (o.steps == 0 || o.batch == 0) throw ConfigError("config: " + p + "steps/batch must be > 0");
  return o;
}

}  // namespace

TrainOptions RunConfig::target_train() const { return train_options(*this, "target."); }
TrainOptions RunConfig::draft_train() const { return train_options(*this, "draft."); }

DraftConfig RunConfig::draft() const {
  const std::string& method = get("draft.method");
  if (method == "vanilla") throw ConfigError("config: draft.method vanilla has no draft config");
  DraftConfig c;
  try {
    c.kind = draft_kind_from_string(method);
  } catch (const std::invalid_argument&) {
    throw ConfigError("config: unknown draft.method '" + method + "'");
  }
  c.rounds = get_size("draft.rounds");
  c.soft_targets = get_bool("draft.soft_targets");
  c.w_token = get_double("draft.w_token");
  c.smooth_l1_beta = get_double("draft.smooth_l1_beta");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

DecodeConfig RunConfig::decode() const {
  DecodeConfig c;
  c.temperature = get_double("decode.temperature");
  c.use_tree = get_bool("decode.use_tree");
  c.depth = get_size("decode.depth");
  c.max_new_tokens = get_size("decode.max_new_tokens");
  c.tree.total_tokens = get_size("tree.total_tokens");
  c.tree.depth = get_size("tree.depth");
  c.tree.expand_k = get_size("tree.expand_k");
  c.tree.children = get_size("tree.children");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace sdlab
