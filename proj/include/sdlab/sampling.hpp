#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace sdlab {

using Token = std::uint32_t;

class DegenerateResidual : public std::domain_error {
 public:
  DegenerateResidual() : std::domain_error("degenerate residual: p equals q everywhere") {}
};

// SplitMix64 step; also used to derive independent seeds.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// xoshiro256** seeded from SplitMix64. Streams are identical on every
// platform for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (one draw per call, no caching).
  double normal();

  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t s_[4];
  std::uint64_t seed_;
};

struct Dist {
  std::vector<double> probs;

  Dist() = default;
  explicit Dist(std::vector<double> p);

  static Dist from_logits(std::span<const double> logits, double temperature = 1.0);

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  // Nonnegative and sums to 1 within 1e-9.
  bool valid() const;
};

// Inverse-CDF draw over token order 0..|V|-1.
Token sample(const Dist& d, Rng& rng);

// norm(max(0, p - q)); throws DegenerateResidual when p - q <= 0 everywhere.
Dist residual(const Dist& p, const Dist& q);

// min(1, p(x)/q(x)); q(x) must be > 0 since x was drafted from q.
double acceptance_probability(const Dist& p, const Dist& q, Token x);

// Lowest token id among the maxima.
Token greedy(std::span<const double> logits);

double total_variation(std::span<const double> a, std::span<const double> b);

}  // namespace sdlab
