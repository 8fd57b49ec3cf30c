#ifndef BCDIFF_NN_PARAM_HPP
#define BCDIFF_NN_PARAM_HPP

#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "bcdiff/core.hpp"
#include "bcdiff/nn/tensor.hpp"
#include "bcdiff/random.hpp"

namespace bcdiff::nn {

// One named learnable array. value/grad stay empty when the owning store is
// in count-only mode (used to size a model without allocating it).
template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    AlignedVec<T> value;
    AlignedVec<T> grad;

    std::int64_t size() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    bool materialized() const { return !value.empty(); }
};

// Owns all parameters of a model in creation order. Creation order is the
// canonical order for checkpoints, optimizer state and EMA shadows, so it
// must be deterministic (it is: model construction is sequential).
template <typename T>
class ParamStore {
public:
    explicit ParamStore(bool count_only = false) : count_only_(count_only) {}

    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Param<T>& create(const std::string& name, std::vector<int> shape) {
        require(!by_name_.count(name), "ParamStore: duplicate parameter name " + name);
        for (int d : shape) require(d > 0, "ParamStore: nonpositive dim in " + name);
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->shape = std::move(shape);
        if (!count_only_) {
            p->value.assign(static_cast<std::size_t>(p->size()), T(0));
            p->grad.assign(static_cast<std::size_t>(p->size()), T(0));
        }
        Param<T>* raw = p.get();
        by_name_[name] = raw;
        params_.push_back(std::move(p));
        return *raw;
    }

    Param<T>* find(const std::string& name) {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }
    const Param<T>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    std::size_t count() const { return params_.size(); }
    Param<T>& at(std::size_t i) { return *params_[i]; }
    const Param<T>& at(std::size_t i) const { return *params_[i]; }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p->size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_)
            std::fill(p->grad.begin(), p->grad.end(), T(0));
    }

    void scale_grad(T s) {
        for (auto& p : params_)
            for (T& g : p->grad) g *= s;
    }

    bool grads_finite() const {
        for (const auto& p : params_)
            for (T g : p->grad)
                if (!std::isfinite(static_cast<double>(g))) return false;
        return true;
    }

    bool values_finite() const {
        for (const auto& p : params_)
            for (T v : p->value)
                if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool count_only() const { return count_only_; }

private:
    bool count_only_;
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::unordered_map<std::string, Param<T>*> by_name_;
};

// Gaussian fan-in initialization, std = init_scale / sqrt(fan_in).
template <typename T>
void init_normal(Param<T>& p, std::int64_t fan_in, double init_scale, Rng& rng) {
    if (!p.materialized()) return;
    const double sd = init_scale / std::sqrt(static_cast<double>(fan_in));
    for (T& x : p.value) x = static_cast<T>(rng.normal() * sd);
}

template <typename T>
void init_constant(Param<T>& p, T x) {
    if (!p.materialized()) return;
    std::fill(p.value.begin(), p.value.end(), x);
}

}  // namespace bcdiff::nn

#endif  // BCDIFF_NN_PARAM_HPP
