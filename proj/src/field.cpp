#include "moments/field.hpp"

#include <cmath>
#include <string>

#include "moments/error.hpp"

namespace moments {

int FieldShape::sites() const {
  int s = 1;
  for (int i = 0; i < dims; ++i) s *= extent;
  return s;
}

void validate(const FieldShape& shape) {
  if (shape.batch < 1) throw ParameterError("batch size must be >= 1");
  if (shape.extent < 1) throw ParameterError("spatial extent must be >= 1");
  if (shape.dims != 1 && shape.dims != 2) throw ParameterError("spatial dims must be 1 or 2, got " + std::to_string(shape.dims));
  if (shape.channels < 1) throw ParameterError("channel count must be >= 1");
}

BatchedField::BatchedField(FieldShape shape, double fill) : shape_(shape) {
  validate(shape_);
  values_.assign(shape_.size(), fill);
}

BatchedField::BatchedField(FieldShape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
  validate(shape_);
  if (values_.size() != shape_.size()) {
    throw ShapeError("value count " + std::to_string(values_.size()) + " does not match shape (" +
                     std::to_string(shape_.size()) + ")");
  }
}

RowMatrixMap BatchedField::matrix() {
  return {values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(shape_.channels)};
}

ConstRowMatrixMap BatchedField::matrix() const {
  return {values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(shape_.channels)};
}

bool BatchedField::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

BatchedField& BatchedField::operator+=(const BatchedField& other) {
  if (!(other.shape_ == shape_)) throw ShapeError("cannot add fields of different shapes");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

BatchedField& BatchedField::operator*=(double scale) {
  for (double& v : values_) v *= scale;
  return *this;
}

BatchedField operator+(BatchedField lhs, const BatchedField& rhs) {
  lhs += rhs;
  return lhs;
}

BatchedField operator*(double scale, BatchedField field) {
  field *= scale;
  return field;
}

}  // namespace moments
