#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "angiodiff/nn/tensor.hpp"

namespace angiodiff::nn {

enum class Init { he_normal, zeros, ones };

struct Param {
    std::string name;
    Tensor value, grad;
    Tensor adam_m, adam_v;
    bool trainable = true;
};

// Named parameter registry. Creation order is deterministic per model, which
// keeps initialization streams and checkpoint layout reproducible.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : rng_(seed) {}

    std::shared_ptr<Param> create(const std::string& name, Shape4 shape, Init init) {
        if (by_name_.count(name)) throw InvalidArgument("ParamStore: duplicate name " + name);
        auto p = std::make_shared<Param>();
        p->name = name;
        switch (init) {
            case Init::zeros:
                p->value = Tensor(shape, 0.0f);
                break;
            case Init::ones:
                p->value = Tensor(shape, 1.0f);
                break;
            case Init::he_normal: {
                const int64_t fan_in =
                    static_cast<int64_t>(shape.c) * shape.h * shape.w;  // (out, in, kh, kw)
                const float stddev = std::sqrt(2.0f / static_cast<float>(std::max<int64_t>(1, fan_in)));
                p->value = Tensor::randn(shape, rng_, stddev);
                break;
            }
        }
        p->grad = Tensor(shape, 0.0f);
        p->adam_m = Tensor(shape, 0.0f);
        p->adam_v = Tensor(shape, 0.0f);
        order_.push_back(p);
        by_name_[name] = p;
        return p;
    }

    const std::vector<std::shared_ptr<Param>>& all() const { return order_; }

    std::shared_ptr<Param> find(const std::string& name) const {
        const auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    void set_trainable_all(bool trainable) {
        for (auto& p : order_) p->trainable = trainable;
    }

    void set_trainable_prefix(const std::string& prefix, bool trainable) {
        for (auto& p : order_)
            if (p->name.rfind(prefix, 0) == 0) p->trainable = trainable;
    }

    int64_t count_values() const {
        int64_t n = 0;
        for (const auto& p : order_) n += p->value.numel();
        return n;
    }

    // FNV-1a over raw parameter bytes, in registration order; freeze tests
    // compare this before/after training.
    uint64_t content_hash(const std::string& prefix = "") const {
        uint64_t h = 0xCBF29CE484222325ULL;
        for (const auto& p : order_) {
            if (!prefix.empty() && p->name.rfind(prefix, 0) != 0) continue;
            const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
            for (int64_t i = 0; i < p->value.numel() * 4; ++i) {
                h ^= bytes[i];
                h *= 0x100000001B3ULL;
            }
        }
        return h;
    }

private:
    std::vector<std::shared_ptr<Param>> order_;
    std::map<std::string, std::shared_ptr<Param>> by_name_;
    Rng rng_;
};

class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    static void zero_all(ParamStore& store) {
        for (auto& p : store.all()) p->grad.fill(0.0f);
    }

    void zero_grad(ParamStore& store) { zero_all(store); }

    void step(ParamStore& store) { step(store.all()); }

    void step(const std::vector<std::shared_ptr<Param>>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (const auto& p : params) {
            if (!p->trainable) continue;
            float* v = p->value.data();
            const float* g = p->grad.data();
            float* m = p->adam_m.data();
            float* vv = p->adam_v.data();
            const int64_t n = p->value.numel();
            for (int64_t i = 0; i < n; ++i) {
                m[i] = static_cast<float>(b1_ * m[i] + (1.0 - b1_) * g[i]);
                vv[i] = static_cast<float>(b2_ * vv[i] + (1.0 - b2_) * g[i] * g[i]);
                const double mhat = m[i] / bc1;
                const double vhat = vv[i] / bc2;
                v[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    int t() const { return t_; }
    double lr() const { return lr_; }

private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
};

}  // namespace angiodiff::nn
