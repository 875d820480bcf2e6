#include "sdlab/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace sdlab {

namespace {

constexpr const char* kMagic = "sdlab-checkpoint 1";

const std::string& header_value(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.header.find(key);
  if (it == ckpt.header.end()) throw std::runtime_error("checkpoint: missing header key " + key);
  return it->second;
}

// Header keys with `prefix` stripped.
std::map<std::string, std::string> strip_prefix(const std::map<std::string, std::string>& kv,
                                                const std::string& prefix) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : kv) {
    if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
  }
  return out;
}

Checkpoint collect(const ParamStore& params) {
  Checkpoint ckpt;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.tensors.emplace_back(params[i].name, params[i].value);
  }
  return ckpt;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  for (const auto& [k, v] : ckpt.header) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos ||
        v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: bad header entry " + k);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << kMagic << '\n';
  for (const auto& [k, v] : ckpt.header) out << k << '=' << v << '\n';
  out << "end_header\n";
  write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  for (;;) {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated header");
    if (line == "end_header") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::runtime_error("checkpoint: bad header line '" + line + "'");
    }
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  try {
    const std::uint32_t count = read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t len = read_u32(in);
      if (len > 4096) throw std::runtime_error("checkpoint: bad tensor name");
      std::string name(len, '\0');
      in.read(name.data(), len);
      if (!in) throw std::runtime_error("checkpoint: truncated tensor name");
      ckpt.tensors.emplace_back(std::move(name), read_tensor(in));
    }
  } catch (const std::runtime_error&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void load_params(ParamStore& params, const Checkpoint& ckpt) {
  if (ckpt.tensors.size() != params.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (!params.contains(name)) throw std::runtime_error("checkpoint: unknown parameter " + name);
    Parameter& p = params.get(name);
    if (p.value.shape != t.shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    p.value = t;
  }
}

void save_target(const std::string& path, const TargetModel& model,
                 const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt = collect(model.params());
  ckpt.header = extra;
  if (!ckpt.header.count("kind")) ckpt.header["kind"] = "target";
  for (const auto& [k, v] : model.config().to_kv()) ckpt.header["model." + k] = v;
  write_checkpoint(path, ckpt);
}

std::shared_ptr<TargetModel> load_target(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  const std::string& kind = header_value(ckpt, "kind");
  if (kind != "target" && kind != "vanilla") {
    throw std::runtime_error("checkpoint: " + path + " holds a " + kind + " model");
  }
  auto model =
      std::make_shared<TargetModel>(ModelConfig::from_kv(strip_prefix(ckpt.header, "model.")), 0);
  load_params(model->params(), ckpt);
  return model;
}

void save_feature_draft(const std::string& path, const FeatureDraftModel& model,
                        std::uint64_t target_hash) {
  Checkpoint ckpt = collect(model.params());
  ckpt.header = model.config().to_kv();
  ckpt.header["kind"] = "feature-draft";
  ckpt.header["target_hash"] = hash_hex(target_hash);
  write_checkpoint(path, ckpt);
}

std::shared_ptr<FeatureDraftModel> load_feature_draft(const std::string& path,
                                                      std::shared_ptr<const TargetModel> target,
                                                      std::uint64_t target_hash) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (header_value(ckpt, "kind") != "feature-draft") {
    throw std::runtime_error("checkpoint: " + path + " is not a feature drafter");
  }
  if (header_value(ckpt, "target_hash") != hash_hex(target_hash)) {
    throw std::invalid_argument("checkpoint: " + path + " was trained against target " +
                                header_value(ckpt, "target_hash") + ", not " +
                                hash_hex(target_hash));
  }
  auto model = std::make_shared<FeatureDraftModel>(std::move(target),
                                                   DraftConfig::from_kv(ckpt.header), 0);
  load_params(model->params(), ckpt);
  return model;
}

}  // namespace sdlab
