#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdlab/corpus.hpp"
#include "sdlab/decoding.hpp"
#include "sdlab/draft_model.hpp"
#include "sdlab/model.hpp"
#include "sdlab/training.hpp"

namespace sdlab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat key = value settings with a fixed schema. Every key has a default;
// unknown keys and values that do not parse as the key's type are errors.
// Defaults describe the toy benchmark.
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  // "key=value" as given on the command line.
  void set_assignment(const std::string& assignment);
  // INI text: `key = value` lines, `#`/`;` comments, optional [section]
  // headers that prefix following keys with "section.".
  void load_text(const std::string& text);
  void load_file(const std::string& path);

  const std::map<std::string, std::string>& values() const { return values_; }
  static std::vector<std::string> keys();

  const std::string& get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::uint64_t> get_u64s(const std::string& key) const;

  ModelConfig target_model() const;
  ModelConfig vanilla_model() const;
  CorpusSpec corpus() const;
  TrainOptions target_train() const;
  TrainOptions draft_train() const;
  DraftConfig draft() const;
  DecodeConfig decode() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sdlab
