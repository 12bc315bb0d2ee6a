#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fann {

/// Ordered list of positive extents. Feature maps are (channels, height, width).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::vector<std::size_t> dims);

    [[nodiscard]] std::size_t rank() const noexcept { return dims_.size(); }
    [[nodiscard]] std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    [[nodiscard]] std::size_t numel() const noexcept;
    [[nodiscard]] const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    std::vector<std::size_t> dims_;
};

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor vector(std::vector<double> values);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] const double* data() const noexcept { return data_.data(); }
    [[nodiscard]] double* data() noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // (c, h, w) access for rank-3 feature maps.
    double& at(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    /// Same data, new shape with equal element count.
    [[nodiscard]] Tensor reshaped(Shape shape) const;
    void fill(double value);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

enum class BinaryOp { add, sub, mul };
enum class ReduceOp { sum, sum_of_squares, max };

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor max_with_zero(const Tensor& a);
double reduce(ReduceOp op, const Tensor& t);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }

/// a += factor * b, in place. Shapes must match.
void axpy(double factor, const Tensor& b, Tensor& a);
double dot(std::span<const double> a, std::span<const double> b);

/// Splits a (C,H,W) map into `parts` height bands; earlier bands take the extra rows.
std::vector<Tensor> slice_height(const Tensor& t, std::size_t parts);
/// Inverse of slice_height: stacks (C,Hi,W) bands along height.
Tensor concat_height(std::span<const Tensor> slices);
/// Concatenates flattened tensors into one vector.
Tensor concat_flat(std::span<const Tensor> parts);

bool all_finite(const Tensor& t);

}  // namespace fann
