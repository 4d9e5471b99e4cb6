#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "aau/rng.hpp"
#include "aau/tensor.hpp"

namespace aau {

// Trainable tensor. grad always has the same shape as value and is all zeros
// after reset_grad().
struct Parameter {
    std::string name;
    TensorF value;
    TensorF grad;
    bool trainable = true;

    Parameter(std::string n, TensorF v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape), trainable(train) {}

    void reset_grad() { grad.fill(0.0); }
};

// Owns parameters in registration order; names are unique. Registration order
// is the serialization order, so it must be deterministic for a given config.
class ParamStore {
public:
    Parameter& create(const std::string& name, TensorF init, bool trainable = true) {
        require(index_.find(name) == index_.end(), "duplicate-param", name);
        params_.push_back(std::make_unique<Parameter>(name, std::move(init), trainable));
        index_[name] = params_.size() - 1;
        return *params_.back();
    }

    Parameter& create_trunc_normal(const std::string& name, Shape shape, Rng& rng, double stddev = 0.02) {
        return create(name, rng.tensor_trunc_normal(std::move(shape), stddev));
    }

    Parameter& create_zeros(const std::string& name, Shape shape) {
        return create(name, TensorF::zeros(std::move(shape)));
    }

    Parameter& create_full(const std::string& name, Shape shape, double v) {
        return create(name, TensorF::full(std::move(shape), v));
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Parameter& get(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown-param", name);
        return *params_[it->second];
    }

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    std::int64_t trainable_scalars() const {
        std::int64_t n = 0;
        for (const auto& p : params_)
            if (p->trainable) n += p->value.numel();
        return n;
    }

    void reset_grads() {
        for (auto& p : params_) p->reset_grad();
    }

    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace aau
