#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedchain {

/// Flat 64-bit parameter vector with shape metadata. Holds global weights,
/// local updates and their aggregates. Entries are kept finite: every public
/// operation validates its result.
class WeightTensor {
 public:
  WeightTensor() = default;
  WeightTensor(std::vector<double> data, std::vector<std::size_t> shape);

  static WeightTensor zeros(std::vector<std::size_t> shape);

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const WeightTensor& other) const { return shape_ == other.shape_; }

  // Little-endian f64 dump of the data, used for checkpoint blobs and hashing.
  std::vector<std::uint8_t> to_le_bytes() const;

  // Throws InvalidArgument on any NaN/Inf entry.
  void check_finite(const char* context) const;

 private:
  std::vector<double> data_;
  std::vector<std::size_t> shape_;
};

double l2_norm(const WeightTensor& w);

WeightTensor add(const WeightTensor& a, const WeightTensor& b);
WeightTensor sub(const WeightTensor& a, const WeightTensor& b);
WeightTensor scale(const WeightTensor& a, double k);

}  // namespace fedchain
