#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdlab {

// Raised when a numeric contract is violated (NaN/Inf, bad shapes, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles. Rank 1 and 2 are the only ranks the
// kernels use; a rank-1 tensor behaves as a single row.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor row(std::vector<double> values);

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) {
    return {data.data() + r * cols(), cols()};
  }
  std::span<const double> row_span(std::size_t r) const {
    return {data.data() + r * cols(), cols()};
  }

  bool same_shape(const Tensor& other) const;
  bool all_finite() const;
  // Throws NumericError naming `where` if any element is NaN/Inf.
  void check_finite(const char* where) const;
};

std::size_t shape_product(std::span<const std::size_t> shape);

// Max-subtracted softmax with temperature. Throws on non-finite input or
// temperature <= 0.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
std::vector<double> log_softmax(std::span<const double> logits);

// Lowest index among the maxima.
std::size_t argmax(std::span<const double> values);

// -sum target * log softmax(logits).
double cross_entropy(std::span<const double> logits, std::span<const double> target);

// Binary tensor format: u32 rank, u32 dims[rank], f64 data[prod(dims)], all
// little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_f64(std::ostream& out, double v);
double read_f64(std::istream& in);

}  // namespace sdlab
