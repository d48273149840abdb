#include "ds2net/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace ds2net {

void require(bool condition, const std::string& message) {
    if (!condition) throw std::invalid_argument(message);
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

static void validate_shape(const Shape& shape) {
    require(!shape.empty(), "tensor shape must have at least one dimension");
    for (auto d : shape) require(d >= 1, "tensor dimension of size 0 in " + shape_string(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    require(shape_numel(shape_) == data_.size(),
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
}

std::size_t Tensor::dim(std::size_t i) const {
    require(i < shape_.size(), "dimension index out of range for shape " + shape_string(shape_));
    return shape_[i];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::item() const {
    require(data_.size() == 1, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Dims4 dims4(const Tensor& t, const char* what) {
    require(t.rank() == 4, std::string(what) + ": expected NCHW tensor, got " + shape_string(t.shape()));
    return {t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]};
}

std::ostream& operator<<(std::ostream& os, const Tensor& t) {
    os << "Tensor" << shape_string(t.shape()) << " {";
    const std::size_t shown = std::min<std::size_t>(t.numel(), 16);
    for (std::size_t i = 0; i < shown; ++i) os << (i ? ", " : "") << t[i];
    if (shown < t.numel()) os << ", ...";
    return os << "}";
}

} // namespace ds2net
