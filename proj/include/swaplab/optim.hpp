#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "swaplab/tensor.hpp"

namespace swaplab {

struct OptimConfig {
    float learning_rate = 5e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon_adam = 1e-8f;

    void validate() const;
};

/// One parameter tensor with its Adam state. Moments always share the
/// parameter's shape; the step counter is per parameter.
struct ParamState {
    Tensor value;
    Tensor m;
    Tensor v;
    int64_t step = 0;
};

/// Named parameters of one network, iterated in insertion order. Shapes are
/// fixed at creation; names are unique.
class ParamSet {
public:
    ParamState& add(const std::string& name, Tensor value);
    ParamState& at(const std::string& name);
    const ParamState& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    size_t size() const { return entries_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    ParamState& operator[](size_t i) { return entries_[i]; }
    const ParamState& operator[](size_t i) const { return entries_[i]; }

    int64_t total_elements() const;

private:
    std::vector<std::string> names_;
    std::vector<ParamState> entries_;
    std::map<std::string, size_t> index_;
};

/// One bias-corrected Adam update on the named parameters. `grads` holds one
/// gradient per updated name (others untouched). Rejects non-finite
/// gradients — callers treat that as a fatal experiment error.
void adam_step(ParamSet& params, const std::vector<std::pair<std::string, const Tensor*>>& grads,
               const OptimConfig& cfg);

} // namespace swaplab
