#include "fb/tensor.hpp"

#include <cmath>
#include <sstream>

namespace fb {

int64_t shape_numel(const std::vector<int> &shape) {
    int64_t n = 1;
    for (int e : shape) {
        require(e > 0, "tensor extents must be positive, got " + shape_to_string(shape));
        n *= e;
    }
    return n;
}

std::string shape_to_string(const std::vector<int> &shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor Tensor::zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0f); }

Tensor Tensor::full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }

Tensor Tensor::scalar(float v) { return Tensor({1}, v); }

Tensor Tensor::randn(std::vector<int> s, std::mt19937 &rng, float stddev) {
    Tensor t(std::move(s));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto &v : t.data) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(std::vector<int> s, std::mt19937 &rng, float lo, float hi) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto &v : t.data) v = dist(rng);
    return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<float> values) {
    Tensor t;
    t.shape = std::move(s);
    require(shape_numel(t.shape) == static_cast<int64_t>(values.size()),
            "value count does not match shape " + shape_to_string(t.shape));
    t.data = std::move(values);
    return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

bool Tensor::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const char *what) const {
    if (!all_finite()) fail(std::string("non-finite values in ") + what);
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

}  // namespace fb
