#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdlab/sampling.hpp"

namespace sdlab {

using Sequence = std::vector<Token>;

// Seeded stochastic formal language. Each sequence picks one component by
// the mixture weights; every position is then independently corrupted to a
// different uniform token with probability `noise`.
//
//   cycle  - one of `num_patterns` fixed patterns of `period` distinct
//            tokens, repeated from a random phase
//   copy   - a fresh random pattern of `period` tokens, repeated
//   markov - walk of a fixed sparse first-order chain: each token has
//            `branching` successors with geometric weights `markov_decay`
//   interleave - two pool patterns (independent random phases) alternating
//            token by token, so consecutive positions follow different
//            streams
struct CorpusSpec {
  std::uint64_t seed = 0;
  std::size_t vocab_size = 64;
  std::size_t period = 4;
  std::size_t num_patterns = 1;
  double noise = 0.0;
  double w_cycle = 1.0;
  double w_copy = 0.0;
  double w_markov = 0.0;
  double w_interleave = 0.0;
  std::size_t branching = 3;
  double markov_decay = 0.35;
  std::size_t num_sequences = 64;
  std::size_t seq_len = 64;
  double heldout_fraction = 0.125;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
};

struct Corpus {
  std::vector<Sequence> train;
  std::vector<Sequence> heldout;
  // Pre-corruption versions of train followed by heldout, same order.
  std::vector<Sequence> clean;
  // Component index per sequence (0 cycle, 1 copy, 2 markov, 3 interleave).
  std::vector<int> component;
};

Corpus make_corpus(const CorpusSpec& spec);

// Successor table of the markov component for `spec` (rows sum to 1).
std::vector<std::vector<double>> markov_table(const CorpusSpec& spec);

}  // namespace sdlab
