#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fb {

[[noreturn]] inline void fail(const std::string &msg) {
    throw std::runtime_error(msg);
}

inline void require(bool ok, const std::string &msg) {
    if (!ok) fail(msg);
}

// Dense row-major float32 tensor. All extents must be positive; values are
// expected to stay finite (ops treat NaN/Inf as an error state).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, float fill = 0.0f);

    static Tensor zeros(std::vector<int> s);
    static Tensor full(std::vector<int> s, float v);
    static Tensor scalar(float v);
    static Tensor randn(std::vector<int> s, std::mt19937 &rng, float stddev = 1.0f);
    static Tensor uniform(std::vector<int> s, std::mt19937 &rng, float lo, float hi);
    static Tensor from(std::vector<int> s, std::vector<float> values);

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const;
    bool same_shape(const Tensor &other) const { return shape == other.shape; }
    bool is_scalar() const { return numel() == 1; }

    // 2-D / 3-D accessors; extent checks are the caller's job.
    float &at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    const float &at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    float &at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    const float &at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    bool all_finite() const;
    void check_finite(const char *what) const;

    std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int> &shape);
std::string shape_to_string(const std::vector<int> &shape);

}  // namespace fb
