#include "sdlab/sampling.hpp"

#include <cmath>
#include <numbers>

#include "sdlab/tensor.hpp"

namespace sdlab {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  splitmix64(s);
  return splitmix64(s);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be > 0");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

Dist::Dist(std::vector<double> p) : probs(std::move(p)) {
  if (!valid()) throw std::invalid_argument("Dist: not a probability vector");
}

Dist Dist::from_logits(std::span<const double> logits, double temperature) {
  return Dist(softmax(logits, temperature));
}

bool Dist::valid() const {
  if (probs.empty()) return false;
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
    s += p;
  }
  return std::abs(s - 1.0) <= 1e-9;
}

Token sample(const Dist& d, Rng& rng) {
  if (!d.valid()) throw std::invalid_argument("sample: invalid distribution");
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.probs[i] <= 0.0) continue;
    cum += d.probs[i];
    last = i;
    if (u < cum) return static_cast<Token>(i);
  }
  // Rounding left u above the total mass; fall back to the last supported token.
  return static_cast<Token>(last);
}

Dist residual(const Dist& p, const Dist& q) {
  if (p.size() != q.size()) throw std::invalid_argument("residual: vocabulary mismatch");
  std::vector<double> r(p.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    r[i] = std::max(0.0, p.probs[i] - q.probs[i]);
    z += r[i];
  }
  if (!(z > 0.0)) throw DegenerateResidual();
  for (double& v : r) v /= z;
  Dist out;
  out.probs = std::move(r);
  return out;
}

double acceptance_probability(const Dist& p, const Dist& q, Token x) {
  if (p.size() != q.size() || x >= p.size()) {
    throw std::invalid_argument("acceptance_probability: vocabulary mismatch");
  }
  const double qx = q.probs[x];
  if (!(qx > 0.0)) throw std::invalid_argument("acceptance_probability: drafted token has q = 0");
  return std::min(1.0, p.probs[x] / qx);
}

Token greedy(std::span<const double> logits) { return static_cast<Token>(argmax(logits)); }

double total_variation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace sdlab
