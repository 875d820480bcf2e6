#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdlab/autodiff.hpp"
#include "sdlab/draft_model.hpp"
#include "sdlab/model.hpp"

namespace sdlab {

// Text header (magic line, key=value lines, end_header) followed by named
// binary tensors in parameter order.
struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Throws std::runtime_error on I/O failure or a malformed file.
Checkpoint read_checkpoint(const std::string& path);

std::uint64_t fnv1a64(std::string_view bytes);
// FNV-1a 64 of the file contents.
std::uint64_t file_hash(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Copies tensors into same-named parameters; every parameter must be
// present with a matching shape.
void load_params(ParamStore& params, const Checkpoint& ckpt);

// checkpoint.kind = "target" (also used for the small standalone drafter,
// with kind "vanilla" and the target hash).
void save_target(const std::string& path, const TargetModel& model,
                 const std::map<std::string, std::string>& extra = {});
std::shared_ptr<TargetModel> load_target(const std::string& path);

// Stores the draft config and the hash of the target checkpoint it was
// trained against.
void save_feature_draft(const std::string& path, const FeatureDraftModel& model,
                        std::uint64_t target_hash);
// Throws std::invalid_argument when `target_hash` differs from the recorded
// one.
std::shared_ptr<FeatureDraftModel> load_feature_draft(const std::string& path,
                                                      std::shared_ptr<const TargetModel> target,
                                                      std::uint64_t target_hash);

}  // namespace sdlab
