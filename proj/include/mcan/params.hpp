#pragma once

#include <map>
#include <string>

#include "mcan/rng.hpp"
#include "mcan/tensor.hpp"

namespace mcan {

// Named registry of trainable tensors. Iteration is in name order, which
// keeps optimizer updates, regularization and serialization deterministic.
class ParamStore {
public:
    TensorPtr create(const std::string& name, const Shape& shape, double lo, double hi, Rng& rng);
    TensorPtr create_zeros(const std::string& name, const Shape& shape);
    TensorPtr adopt(const std::string& name, TensorPtr tensor);

    const TensorPtr& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    const std::map<std::string, TensorPtr>& all() const { return params_; }

    std::size_t tensor_count() const { return params_.size(); }
    std::size_t value_count() const;
    void zero_grads();

private:
    TensorPtr insert(const std::string& name, TensorPtr t);
    std::map<std::string, TensorPtr> params_;
};

}  // namespace mcan
