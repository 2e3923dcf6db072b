#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdlab/tensor.hpp"

namespace kdlab {

// Linear warmup to peak_lr over ceil(warmup_fraction * total_steps) steps,
// then linear decay to zero at total_steps.
inline double lr_at(int64_t step, int64_t total_steps, double peak_lr, double warmup_fraction) {
    if (step < 0 || step > total_steps) {
        throw std::invalid_argument("lr_at: step outside [0, total_steps]");
    }
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
        throw std::invalid_argument("lr_at: warmup_fraction must lie in [0, 1)");
    }
    if (total_steps == 0) {
        return 0.0;
    }
    const int64_t warmup =
        static_cast<int64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    if (warmup > 0 && step <= warmup) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    return peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::map<std::string, std::vector<T>> m;
    std::map<std::string, std::vector<T>> v;
    int64_t step = 0;
};

using AdamStateF = AdamState<float>;
using AdamStateD = AdamState<double>;

template <typename T>
double global_grad_norm(const std::map<std::string, std::vector<T>>& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(sq);
}

// Scales all gradients so their global norm does not exceed max_norm.
// Returns the pre-clip norm. max_norm <= 0 disables clipping.
template <typename T>
double clip_grads(std::map<std::string, std::vector<T>>& grads, double max_norm) {
    const double norm = global_grad_norm(grads);
    if (max_norm > 0.0 && norm > max_norm) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto& [name, g] : grads) {
            for (T& v : g) v *= s;
        }
    }
    return norm;
}

// One adaptive-moment update over every entry in `grads`; parameters without
// a gradient entry are untouched. The step counter advances once per call.
template <typename T>
void adam_step(std::map<std::string, Tensor<T>>& params,
               const std::map<std::string, std::vector<T>>& grads, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {}) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& [name, g] : grads) {
        auto pit = params.find(name);
        if (pit == params.end()) {
            throw std::invalid_argument("adam_step: gradient for unknown parameter " + name);
        }
        Tensor<T>& p = pit->second;
        if (g.size() != p.data.size()) {
            throw std::invalid_argument("adam_step: gradient shape mismatch on " + name);
        }
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(g.size(), T(0));
        if (v.empty()) v.assign(g.size(), T(0));
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        for (size_t i = 0; i < g.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            p.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

}  // namespace kdlab
