#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdlab/kernels.hpp"
#include "kdlab/model.hpp"

namespace kdlab {

struct LoraConfig {
    int rank = 0;  // 0 picks min(32, d_model / 2)
    double scale = 1.0;
    uint64_t seed = 0;
};

// Low-rank residual on the attention q/v projections: the adapted projection
// computes x @ W + scale * (x @ down @ up). `up` starts at zero so a freshly
// attached adapter is an exact identity, and down/up are the only tensors the
// online-distillation trainer updates on the teacher side.
template <typename T>
struct LoraAdapter {
    LoraConfig config;
    int rank = 0;
    std::map<std::string, Tensor<T>> params;
    bool consumed = false;

    void check_usable(const char* what) const {
        if (consumed) {
            throw std::logic_error(std::string(what) + ": adapter was merged and is no longer usable");
        }
    }

    int64_t num_params() const {
        int64_t n = 0;
        for (const auto& [name, t] : params) n += t.numel();
        return n;
    }
};

using LoraF = LoraAdapter<float>;
using LoraD = LoraAdapter<double>;

inline std::vector<std::string> lora_target_names(const ModelConfig& cfg) {
    std::vector<std::string> names;
    for (int l = 0; l < cfg.n_layers; ++l) {
        names.push_back(detail::layer_prefix(l) + "attn.wq");
        names.push_back(detail::layer_prefix(l) + "attn.wv");
    }
    return names;
}

template <typename T>
LoraAdapter<T> attach_lora(const TransformerLM<T>& m, LoraConfig cfg) {
    if (cfg.rank < 0) {
        throw std::invalid_argument("attach_lora: rank must be non-negative");
    }
    if (!(cfg.scale > 0.0)) {
        throw std::invalid_argument("attach_lora: scale must be positive");
    }
    const int d = m.config.d_model;
    LoraAdapter<T> a;
    a.config = cfg;
    a.rank = cfg.rank > 0 ? cfg.rank : std::min(32, d / 2);
    if (a.rank > d) {
        throw std::invalid_argument("attach_lora: rank exceeds d_model");
    }
    for (const std::string& target : lora_target_names(m.config)) {
        Rng rng = derive_stream(cfg.seed, target + ".lora_down");
        Tensor<T> down = Tensor<T>::zeros({d, a.rank});
        for (T& v : down.data) v = static_cast<T>(rng.normal(0.0, kInitStd));
        a.params.emplace(target + ".lora_down", std::move(down));
        a.params.emplace(target + ".lora_up", Tensor<T>::zeros({a.rank, d}));
    }
    return a;
}

// Adds the adapter tensors to a forward binding produced by bind_params.
template <typename T>
void bind_adapter(Tape<T>& tape, const LoraAdapter<T>& a, bool trainable,
                  std::map<std::string, Var>& vars) {
    a.check_usable("bind_adapter");
    for (const auto& [name, t] : a.params) {
        vars.emplace(name, tape.leaf(t, trainable));
    }
}

// scale * down @ up for one adapted projection, as a dense [d, d] matrix.
template <typename T>
Tensor<T> adapter_delta(const LoraAdapter<T>& a, const std::string& target) {
    a.check_usable("adapter_delta");
    auto down = a.params.find(target + ".lora_down");
    auto up = a.params.find(target + ".lora_up");
    if (down == a.params.end() || up == a.params.end()) {
        throw std::invalid_argument("adapter_delta: no adapter on " + target);
    }
    const int d = down->second.shape[0];
    const int r = down->second.shape[1];
    Tensor<T> delta = Tensor<T>::zeros({d, d});
    gemm_nn(down->second.data.data(), up->second.data.data(), delta.data.data(), d, r, d);
    for (T& v : delta.data) v *= static_cast<T>(a.config.scale);
    return delta;
}

// Folds the adapter into the base weights and consumes it; any later use of
// the adapter throws.
template <typename T>
TransformerLM<T> merge_adapters(const TransformerLM<T>& m, LoraAdapter<T>& a) {
    a.check_usable("merge_adapters");
    TransformerLM<T> merged = m;
    for (const std::string& target : lora_target_names(m.config)) {
        Tensor<T> delta = adapter_delta(a, target);
        Tensor<T>& w = merged.params.at(target);
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] += delta.data[i];
    }
    a.consumed = true;
    return merged;
}

template <typename T>
Tensor<T> forward_logits_nograd(const TransformerLM<T>& m, const LoraAdapter<T>& a,
                                const std::vector<int>& tokens) {
    Tape<T> tape;
    auto vars = bind_params(tape, m, false);
    bind_adapter(tape, a, false, vars);
    Var logits = forward_logits(tape, m.config, vars, tokens, a.config.scale);
    return tape.value(logits);
}

template <typename T>
std::vector<int> generate(const TransformerLM<T>& m, const LoraAdapter<T>& a,
                          const std::vector<int>& prompt, const DecodeConfig& dc,
                          Rng* rng = nullptr) {
    a.check_usable("generate");
    return generate_with<T>(
        m.config, [&](const std::vector<int>& ctx) { return forward_logits_nograd(m, a, ctx); },
        prompt, dc, rng);
}

}  // namespace kdlab
