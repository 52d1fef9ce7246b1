#pragma once

#include <map>
#include <memory>
#include <string>

#include "tkil/model.hpp"
#include "tkil/tensor.hpp"

namespace tkil {

// Applies one update to the named arrays present in `grads`; arrays without a
// gradient entry are left untouched, which is how scope-restricted finetuning
// freezes the feature extractor.
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(ModelState& m, const std::map<std::string, Tensor>& grads, double lr) = 0;
};

// id: "sgd" (stateless w -= lr*g) or "radam" (rectified adaptive moments).
// With fresh state, radam's first step is the unadapted lr*m_hat update.
std::unique_ptr<Optimizer> make_optimizer(const std::string& id);

} // namespace tkil
