#include "tkil/optimizer.hpp"

#include <cmath>

#include "tkil/errors.hpp"

namespace tkil {

namespace {

class Sgd final : public Optimizer {
public:
    void step(ModelState& m, const std::map<std::string, Tensor>& grads, double lr) override {
        for (const auto& [name, g] : grads) {
            Tensor& w = m.array(name);
            if (!w.same_shape(g)) throw ShapeMismatch("gradient shape mismatch on " + name);
            for (size_t i = 0; i < w.data.size(); ++i) w.data[i] -= lr * g.data[i];
        }
    }
};

class RAdam final : public Optimizer {
public:
    void step(ModelState& m, const std::map<std::string, Tensor>& grads, double lr) override {
        ++t_;
        const double b1t = std::pow(kBeta1, t_);
        const double b2t = std::pow(kBeta2, t_);
        const double rho_inf = 2.0 / (1.0 - kBeta2) - 1.0;
        const double rho_t = rho_inf - 2.0 * t_ * b2t / (1.0 - b2t);
        double rect = 0.0;
        const bool rectified = rho_t > 4.0;
        if (rectified)
            rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                             ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        for (const auto& [name, g] : grads) {
            Tensor& w = m.array(name);
            if (!w.same_shape(g)) throw ShapeMismatch("gradient shape mismatch on " + name);
            auto& m1 = moment1_[name];
            auto& m2 = moment2_[name];
            if (m1.size() != w.data.size()) {
                m1.assign(w.data.size(), 0.0);
                m2.assign(w.data.size(), 0.0);
            }
            for (size_t i = 0; i < w.data.size(); ++i) {
                const double gi = g.data[i];
                m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * gi;
                m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * gi * gi;
                const double mhat = m1[i] / (1.0 - b1t);
                if (rectified) {
                    const double vhat = std::sqrt(m2[i] / (1.0 - b2t));
                    w.data[i] -= lr * rect * mhat / (vhat + kEps);
                } else {
                    w.data[i] -= lr * mhat;
                }
            }
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> moment1_, moment2_;
};

} // namespace

std::unique_ptr<Optimizer> make_optimizer(const std::string& id) {
    if (id == "sgd") return std::make_unique<Sgd>();
    if (id == "radam") return std::make_unique<RAdam>();
    throw ConfigInvalid("unknown optimizer " + id);
}

} // namespace tkil
