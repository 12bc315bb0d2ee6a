#include "fann/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fann/error.hpp"

namespace fann {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    for (auto d : dims_) {
        if (d == 0) throw ShapeError("shape " + str() + " has a zero extent");
    }
}

std::size_t Shape::numel() const noexcept {
    if (dims_.empty()) return 0;
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) out << (i ? "x" : "") << dims_[i];
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_.numel()) {
        throw ShapeError("tensor of shape " + shape_.str() + " needs " + std::to_string(shape_.numel()) +
                         " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "elementwise");
    Tensor out(a.shape());
    auto x = a.values();
    auto y = b.values();
    auto z = out.values();
    switch (op) {
        case BinaryOp::add:
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
            break;
        case BinaryOp::sub:
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
            break;
        case BinaryOp::mul:
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
            break;
    }
    return out;
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out = a;
    for (auto& v : out.values()) v *= factor;
    return out;
}

Tensor max_with_zero(const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

double reduce(ReduceOp op, const Tensor& t) {
    if (t.empty()) throw ShapeError("reduce: empty tensor");
    auto v = t.values();
    switch (op) {
        case ReduceOp::sum:
            return std::accumulate(v.begin(), v.end(), 0.0);
        case ReduceOp::sum_of_squares:
            return dot(v, v);
        case ReduceOp::max:
            return *std::max_element(v.begin(), v.end());
    }
    return 0.0;
}

void axpy(double factor, const Tensor& b, Tensor& a) {
    require_same_shape(a, b, "axpy");
    auto x = b.values();
    auto y = a.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += factor * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<Tensor> slice_height(const Tensor& t, std::size_t parts) {
    if (t.shape().rank() != 3) throw ShapeError("slice_height: expected (C,H,W), got " + t.shape().str());
    const auto c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
    if (parts == 0 || parts > h) {
        throw ShapeError("slice_height: cannot cut height " + std::to_string(h) + " into " + std::to_string(parts) +
                         " parts");
    }
    std::vector<Tensor> out;
    out.reserve(parts);
    std::size_t row = 0;
    for (std::size_t p = 0; p < parts; ++p) {
        const std::size_t rows = h / parts + (p < h % parts ? 1 : 0);
        Tensor s(Shape{c, rows, w});
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* src = t.data() + (ch * h + row) * w;
            std::copy(src, src + rows * w, s.data() + ch * rows * w);
        }
        out.push_back(std::move(s));
        row += rows;
    }
    return out;
}

Tensor concat_height(std::span<const Tensor> slices) {
    if (slices.empty()) throw ShapeError("concat_height: no slices");
    const auto c = slices[0].shape()[0], w = slices[0].shape()[2];
    std::size_t h = 0;
    for (const auto& s : slices) {
        if (s.shape().rank() != 3 || s.shape()[0] != c || s.shape()[2] != w) {
            throw ShapeError("concat_height: incompatible slice " + s.shape().str());
        }
        h += s.shape()[1];
    }
    Tensor out(Shape{c, h, w});
    std::size_t row = 0;
    for (const auto& s : slices) {
        const auto rows = s.shape()[1];
        for (std::size_t ch = 0; ch < c; ++ch) {
            std::copy(s.data() + ch * rows * w, s.data() + (ch + 1) * rows * w, out.data() + (ch * h + row) * w);
        }
        row += rows;
    }
    return out;
}

Tensor concat_flat(std::span<const Tensor> parts) {
    std::vector<double> values;
    for (const auto& p : parts) values.insert(values.end(), p.values().begin(), p.values().end());
    return Tensor::vector(std::move(values));
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace fann
