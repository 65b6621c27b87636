#include "mcan/params.hpp"

#include <stdexcept>

namespace mcan {

TensorPtr ParamStore::create(const std::string& name, const Shape& shape, double lo, double hi,
                             Rng& rng) {
    return insert(name, Tensor::uniform(shape, lo, hi, rng, true));
}

TensorPtr ParamStore::create_zeros(const std::string& name, const Shape& shape) {
    return insert(name, Tensor::zeros(shape, true));
}

TensorPtr ParamStore::adopt(const std::string& name, TensorPtr tensor) {
    if (!tensor->requires_grad) {
        throw std::invalid_argument("adopt: parameter '" + name + "' must require gradients");
    }
    return insert(name, std::move(tensor));
}

const TensorPtr& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

std::size_t ParamStore::value_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) {
        (void)name;
        n += t->size();
    }
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : params_) {
        (void)name;
        t->zero_grad();
    }
}

TensorPtr ParamStore::insert(const std::string& name, TensorPtr t) {
    auto [it, fresh] = params_.emplace(name, std::move(t));
    if (!fresh) throw std::invalid_argument("parameter registered twice: " + name);
    return it->second;
}

}  // namespace mcan
