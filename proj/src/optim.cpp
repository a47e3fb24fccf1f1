#include "swaplab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace swaplab {

void OptimConfig::validate() const {
    if (!(learning_rate > 0.0f)) throw std::invalid_argument("optim: learning_rate must be > 0");
    if (!(beta1 > 0.0f && beta1 < 1.0f)) throw std::invalid_argument("optim: beta1 must be in (0,1)");
    if (!(beta2 > 0.0f && beta2 < 1.0f)) throw std::invalid_argument("optim: beta2 must be in (0,1)");
    if (!(epsilon_adam > 0.0f)) throw std::invalid_argument("optim: epsilon_adam must be > 0");
}

ParamState& ParamSet::add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("params: duplicate name " + name);
    ParamState st;
    st.m = Tensor(value.shape());
    st.v = Tensor(value.shape());
    st.value = std::move(value);
    index_[name] = entries_.size();
    names_.push_back(name);
    entries_.push_back(std::move(st));
    return entries_.back();
}

ParamState& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("params: no parameter named " + name);
    return entries_[it->second];
}

const ParamState& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("params: no parameter named " + name);
    return entries_[it->second];
}

int64_t ParamSet::total_elements() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

void adam_step(ParamSet& params, const std::vector<std::pair<std::string, const Tensor*>>& grads,
               const OptimConfig& cfg) {
    cfg.validate();
    for (const auto& [name, grad] : grads) {
        ParamState& p = params.at(name);
        if (!p.value.same_shape(*grad))
            throw ShapeError("adam_step: gradient " + grad->shape_str() + " vs parameter " + name + " " +
                             p.value.shape_str());
        if (!grad->all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for parameter " + name);

        p.step += 1;
        const float b1 = cfg.beta1, b2 = cfg.beta2;
        const float corr1 = 1.0f - std::pow(b1, static_cast<float>(p.step));
        const float corr2 = 1.0f - std::pow(b2, static_cast<float>(p.step));
        float* w = p.value.data();
        float* m = p.m.data();
        float* v = p.v.data();
        const float* g = grad->data();
        const int64_t n = p.value.numel();
        for (int64_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            const float mhat = m[i] / corr1;
            const float vhat = v[i] / corr2;
            w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon_adam);
        }
    }
}

} // namespace swaplab
