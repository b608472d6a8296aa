#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "genrefusion/errors.hpp"
#include "genrefusion/tensor.hpp"

namespace genrefusion {

struct AdamOptions {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class Adam {
public:
    Adam(std::vector<std::pair<std::string, Tensor>> params, AdamOptions opts = {})
        : params_(std::move(params)), opts_(opts) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& [name, p] : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) {
            if (p.has_grad()) p.zero_grad();
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& [name, p] = params_[pi];
            if (!p.requires_grad() || !p.has_grad()) {
                throw ContractError("adam_step: parameter '" + name + "' has no gradient");
            }
            const std::vector<double>& g = p.grad();
            detail::check_finite(g, "adam_step(grad)");
            double* theta = p.data();
            double* m = m_[pi].data();
            double* v = v_[pi].data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
                v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                theta[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
            }
            detail::check_finite(p.values(), "adam_step");
        }
    }

    std::int64_t step_count() const { return t_; }
    const AdamOptions& options() const { return opts_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamOptions opts_;
    std::int64_t t_ = 0;
};

}  // namespace genrefusion
