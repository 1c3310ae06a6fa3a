#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "npn/tensor.hpp"

namespace npn {

/// A named learned weight. `grad` always has the same shape as `value`;
/// graphs accumulate into it and the optimizer reads from it.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape);
    }
    int numel() const { return value.numel(); }
};

/// Owns every parameter of a model, in stable creation order.
class ParamStore {
  public:
    Param& create(const std::string& name, Tensor init) {
        if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
        params_.push_back(std::make_unique<Param>(name, std::move(init)));
        index_[name] = params_.size() - 1;
        return *params_.back();
    }

    Param& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
        return *params_[it->second];
    }
    const Param& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param*> all() {
        std::vector<Param*> v;
        v.reserve(params_.size());
        for (auto& p : params_) v.push_back(p.get());
        return v;
    }
    std::vector<const Param*> all() const {
        std::vector<const Param*> v;
        v.reserve(params_.size());
        for (auto& p : params_) v.push_back(p.get());
        return v;
    }

    void zero_grads() {
        for (auto& p : params_) p->grad.fill(0.0);
    }

    size_t size() const { return params_.size(); }

    /// Deep copy of all values (not grads), e.g. for best-checkpoint snapshots.
    std::vector<Tensor> snapshot_values() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p->value);
        return out;
    }
    void restore_values(const std::vector<Tensor>& snap) {
        if (snap.size() != params_.size()) throw std::invalid_argument("ParamStore: snapshot size mismatch");
        for (size_t i = 0; i < snap.size(); ++i) {
            if (!snap[i].same_shape(params_[i]->value))
                throw std::invalid_argument("ParamStore: snapshot shape mismatch for '" + params_[i]->name + "'");
            params_[i]->value = snap[i];
        }
    }

  private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace npn
