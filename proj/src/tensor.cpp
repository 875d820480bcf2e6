#include "sdlab/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace sdlab {

std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape{rows, cols}, data(rows * cols, fill) {}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  for (std::size_t d : shape) {
    if (d == 0) throw NumericError("tensor: zero-sized dimension");
  }
  if (shape_product(shape) != data.size()) {
    throw NumericError("tensor: data length does not match shape");
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape.empty()) return 0;
  return shape.size() == 1 ? 1 : shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 0;
  return shape.back();
}

bool Tensor::same_shape(const Tensor& other) const {
  return rows() == other.rows() && cols() == other.cols();
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
}

void Tensor::check_finite(const char* where) const {
  if (!all_finite()) throw NumericError(std::string("non-finite value in ") + where);
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    mx = std::max(mx, v);
  }
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("log_softmax: non-finite input");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double cross_entropy(std::span<const double> logits, std::span<const double> target) {
  if (logits.size() != target.size()) {
    throw std::invalid_argument("cross_entropy: dimension mismatch");
  }
  const auto lp = log_softmax(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (target[i] != 0.0) loss -= target[i] * lp[i];
  }
  return loss;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("read_u32: truncated stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("read_f64: truncated stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) write_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data) write_f64(out, v);
}

Tensor read_tensor(std::istream& in) {
  const std::uint32_t rank = read_u32(in);
  if (rank == 0 || rank > 8) throw std::runtime_error("read_tensor: bad rank");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = read_u32(in);
  std::vector<double> data(shape_product(shape));
  for (double& v : data) v = read_f64(in);
  Tensor t(std::move(shape), std::move(data));
  t.check_finite("read_tensor");
  return t;
}

}  // namespace sdlab
