#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "angiodiff/core/errors.hpp"
#include "angiodiff/core/rng.hpp"

namespace angiodiff::nn {

struct Shape4 {
    int n = 1, c = 1, h = 1, w = 1;

    int64_t numel() const {
        return static_cast<int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;
};

// Rank-4 float tensor (N, C, H, W) with shared storage; copies alias the
// same buffer, clone() deep-copies. Gradients live in separate tensors.
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<float>>()) {}

    explicit Tensor(Shape4 s, float fill = 0.0f)
        : shape_(s), data_(std::make_shared<std::vector<float>>(s.numel(), fill)) {}

    static Tensor randn(Shape4 s, Rng& rng, float stddev = 1.0f) {
        Tensor t(s);
        for (float& v : *t.data_) v = rng.normalf() * stddev;
        return t;
    }

    const Shape4& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }

    float* data() { return data_->data(); }
    const float* data() const { return data_->data(); }
    std::vector<float>& vec() { return *data_; }
    const std::vector<float>& vec() const { return *data_; }

    float& at(int n, int c, int y, int x) {
        return (*data_)[((static_cast<int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }
    float at(int n, int c, int y, int x) const {
        return (*data_)[((static_cast<int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }

    float* sample(int n) { return data() + static_cast<int64_t>(n) * sample_size(); }
    const float* sample(int n) const { return data() + static_cast<int64_t>(n) * sample_size(); }
    int64_t sample_size() const { return static_cast<int64_t>(shape_.c) * shape_.h * shape_.w; }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<float>>(*data_);
        return t;
    }

    void fill(float v) { std::fill(data_->begin(), data_->end(), v); }

    bool all_finite() const {
        for (const float v : *data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    Shape4 shape_;
    std::shared_ptr<std::vector<float>> data_;
};

}  // namespace angiodiff::nn
