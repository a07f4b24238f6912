#include "fedchain/tensor.hpp"

#include <cmath>
#include <cstring>

#include "fedchain/errors.hpp"

namespace fedchain {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw InvalidArgument("tensor shape dimensions must be positive");
    n *= d;
  }
  return shape.empty() ? 0 : n;
}

}  // namespace

WeightTensor::WeightTensor(std::vector<double> data, std::vector<std::size_t> shape)
    : data_(std::move(data)), shape_(std::move(shape)) {
  if (shape_product(shape_) != data_.size()) {
    throw InvalidArgument("tensor shape does not match data length");
  }
  check_finite("WeightTensor construction");
}

WeightTensor WeightTensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return WeightTensor(std::vector<double>(n, 0.0), std::move(shape));
}

std::vector<std::uint8_t> WeightTensor::to_le_bytes() const {
  // Assumes little-endian IEEE-754 host, which the supported targets are.
  std::vector<std::uint8_t> bytes(data_.size() * sizeof(double));
  if (!data_.empty()) std::memcpy(bytes.data(), data_.data(), bytes.size());
  return bytes;
}

void WeightTensor::check_finite(const char* context) const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw InvalidArgument(std::string(context) + ": non-finite tensor entry");
    }
  }
}

double l2_norm(const WeightTensor& w) {
  if (w.empty()) throw InvalidArgument("l2_norm: empty tensor");
  double sum_sq = 0.0;
  for (double v : w.data()) sum_sq += v * v;
  return std::sqrt(sum_sq);
}

WeightTensor add(const WeightTensor& a, const WeightTensor& b) {
  if (!a.same_shape(b)) throw InvalidArgument("add: shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return WeightTensor(std::move(out), a.shape());
}

WeightTensor sub(const WeightTensor& a, const WeightTensor& b) {
  if (!a.same_shape(b)) throw InvalidArgument("sub: shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return WeightTensor(std::move(out), a.shape());
}

WeightTensor scale(const WeightTensor& a, double k) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * k;
  return WeightTensor(std::move(out), a.shape());
}

}  // namespace fedchain
