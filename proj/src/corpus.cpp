#include "sdlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sdlab {

void CorpusSpec::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("corpus: vocab_size must be >= 2");
  if (period == 0 || period > vocab_size) throw std::invalid_argument("corpus: bad period");
  if (num_patterns == 0) throw std::invalid_argument("corpus: num_patterns must be > 0");
  if (noise < 0.0 || noise >= 1.0) throw std::invalid_argument("corpus: noise must be in [0, 1)");
  if (w_cycle < 0.0 || w_copy < 0.0 || w_markov < 0.0 || w_interleave < 0.0 ||
      w_cycle + w_copy + w_markov + w_interleave <= 0.0) {
    throw std::invalid_argument("corpus: mixture weights must be >= 0 with positive sum");
  }
  if (branching == 0 || branching > vocab_size) throw std::invalid_argument("corpus: bad branching");
  if (markov_decay <= 0.0 || markov_decay > 1.0) throw std::invalid_argument("corpus: bad markov_decay");
  if (num_sequences == 0 || seq_len < 2) throw std::invalid_argument("corpus: empty corpus");
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) {
    throw std::invalid_argument("corpus: heldout_fraction must be in [0, 1)");
  }
}

std::map<std::string, std::string> CorpusSpec::to_kv() const {
  auto d = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{"corpus.seed", std::to_string(seed)},
          {"corpus.vocab_size", std::to_string(vocab_size)},
          {"corpus.period", std::to_string(period)},
          {"corpus.num_patterns", std::to_string(num_patterns)},
          {"corpus.noise", d(noise)},
          {"corpus.w_cycle", d(w_cycle)},
          {"corpus.w_copy", d(w_copy)},
          {"corpus.w_markov", d(w_markov)},
          {"corpus.w_interleave", d(w_interleave)},
          {"corpus.branching", std::to_string(branching)},
          {"corpus.markov_decay", d(markov_decay)},
          {"corpus.num_sequences", std::to_string(num_sequences)},
          {"corpus.seq_len", std::to_string(seq_len)},
          {"corpus.heldout_fraction", d(heldout_fraction)}};
}

namespace {

Sequence distinct_tokens(std::size_t count, std::size_t vocab, Rng& rng) {
  Sequence all(vocab);
  std::iota(all.begin(), all.end(), Token{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(vocab - i));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  return all;
}

struct MarkovChain {
  std::vector<std::vector<Token>> successors;
  std::vector<double> weights;
};

MarkovChain build_chain(const CorpusSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0x6d61726bULL));
  MarkovChain chain;
  for (std::size_t t = 0; t < spec.vocab_size; ++t) {
    chain.successors.push_back(distinct_tokens(spec.branching, spec.vocab_size, rng));
  }
  double w = 1.0, z = 0.0;
  for (std::size_t b = 0; b < spec.branching; ++b) {
    chain.weights.push_back(w);
    z += w;
    w *= spec.markov_decay;
  }
  for (double& x : chain.weights) x /= z;
  return chain;
}

}  // namespace

std::vector<std::vector<double>> markov_table(const CorpusSpec& spec) {
  spec.validate();
  const MarkovChain chain = build_chain(spec);
  std::vector<std::vector<double>> table(spec.vocab_size, std::vector<double>(spec.vocab_size, 0.0));
  for (std::size_t t = 0; t < spec.vocab_size; ++t) {
    for (std::size_t b = 0; b < spec.branching; ++b) {
      table[t][chain.successors[t][b]] += chain.weights[b];
    }
  }
  return table;
}

Corpus make_corpus(const CorpusSpec& spec) {
  spec.validate();
  Rng pattern_rng(derive_seed(spec.seed, 0x70617474ULL));
  std::vector<Sequence> patterns;
  for (std::size_t i = 0; i < spec.num_patterns; ++i) {
    patterns.push_back(distinct_tokens(spec.period, spec.vocab_size, pattern_rng));
  }
  const MarkovChain chain = build_chain(spec);
  const Dist branch(chain.weights);
  const double wsum = spec.w_cycle + spec.w_copy + spec.w_markov + spec.w_interleave;
  const Dist mixture({spec.w_cycle / wsum, spec.w_copy / wsum, spec.w_markov / wsum,
                      spec.w_interleave / wsum});

  Corpus corpus;
  Rng rng(derive_seed(spec.seed, 0x73657173ULL));
  std::vector<Sequence> noisy;
  for (std::size_t s = 0; s < spec.num_sequences; ++s) {
    const int comp = static_cast<int>(sample(mixture, rng));
    Sequence seq(spec.seq_len);
    if (comp == 2) {
      Token cur = static_cast<Token>(rng.below(spec.vocab_size));
      for (std::size_t i = 0; i < spec.seq_len; ++i) {
        seq[i] = cur;
        cur = chain.successors[cur][sample(branch, rng)];
      }
    } else if (comp == 3) {
      const Sequence& a = patterns[rng.below(patterns.size())];
      const Sequence& b = patterns[rng.below(patterns.size())];
      const std::size_t pa = static_cast<std::size_t>(rng.below(spec.period));
      const std::size_t pb = static_cast<std::size_t>(rng.below(spec.period));
      for (std::size_t i = 0; i < spec.seq_len; ++i) {
        seq[i] = i % 2 == 0 ? a[(i / 2 + pa) % spec.period] : b[(i / 2 + pb) % spec.period];
      }
    } else {
      const Sequence pat = comp == 0 ? patterns[rng.below(patterns.size())]
                                     : distinct_tokens(spec.period, spec.vocab_size, rng);
      const std::size_t phase = static_cast<std::size_t>(rng.below(spec.period));
      for (std::size_t i = 0; i < spec.seq_len; ++i) seq[i] = pat[(i + phase) % spec.period];
    }
    Sequence corrupted = seq;
    for (Token& t : corrupted) {
      if (rng.uniform() < spec.noise) {
        const Token other = static_cast<Token>(rng.below(spec.vocab_size - 1));
        t = other >= t ? other + 1 : other;
      }
    }
    corpus.clean.push_back(std::move(seq));
    corpus.component.push_back(comp);
    noisy.push_back(std::move(corrupted));
  }
  const auto heldout = static_cast<std::size_t>(
      std::floor(spec.heldout_fraction * static_cast<double>(spec.num_sequences)));
  const std::size_t train = spec.num_sequences - heldout;
  corpus.train.assign(noisy.begin(), noisy.begin() + static_cast<std::ptrdiff_t>(train));
  corpus.heldout.assign(noisy.begin() + static_cast<std::ptrdiff_t>(train), noisy.end());
  return corpus;
}

}  // namespace sdlab
