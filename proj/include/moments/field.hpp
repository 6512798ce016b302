#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace moments {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

/// Geometry of a batched field: M samples, n^d periodic sites, C channels.
struct FieldShape {
  int batch = 1;
  int extent = 1;
  int dims = 1;
  int channels = 1;

  int sites() const;
  /// Number of (sample, site) rows, i.e. M * n^d.
  std::size_t rows() const { return static_cast<std::size_t>(batch) * static_cast<std::size_t>(sites()); }
  std::size_t size() const { return rows() * static_cast<std::size_t>(channels); }

  friend bool operator==(const FieldShape&, const FieldShape&) = default;
};

/// Throws ParameterError unless every count is in range (d in {1,2}).
void validate(const FieldShape& shape);

/// Dense real field of shape (M, n^d, C), stored row-major as [(m * n^d + site) * C + c].
///
/// A row is the feature map vector of one (sample, site) pair; a column is one channel.
class BatchedField {
 public:
  BatchedField() = default;
  explicit BatchedField(FieldShape shape, double fill = 0.0);
  BatchedField(FieldShape shape, std::vector<double> values);

  const FieldShape& shape() const { return shape_; }
  int batch() const { return shape_.batch; }
  int extent() const { return shape_.extent; }
  int dims() const { return shape_.dims; }
  int channels() const { return shape_.channels; }
  int sites() const { return shape_.sites(); }
  std::size_t rows() const { return shape_.rows(); }
  std::size_t size() const { return values_.size(); }

  double& at(int m, int site, int c) { return values_[index(m, site, c)]; }
  double at(int m, int site, int c) const { return values_[index(m, site, c)]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }

  RowMatrixMap matrix();
  ConstRowMatrixMap matrix() const;

  bool all_finite() const;

  BatchedField& operator+=(const BatchedField& other);
  BatchedField& operator*=(double scale);

 private:
  std::size_t index(int m, int site, int c) const {
    return (static_cast<std::size_t>(m) * static_cast<std::size_t>(shape_.sites()) + static_cast<std::size_t>(site)) *
               static_cast<std::size_t>(shape_.channels) +
           static_cast<std::size_t>(c);
  }

  FieldShape shape_{};
  std::vector<double> values_;
};

BatchedField operator+(BatchedField lhs, const BatchedField& rhs);
BatchedField operator*(double scale, BatchedField field);

}  // namespace moments
