#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdlab/rng.hpp"
#include "kdlab/tape.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    int n_heads = 0;
    int max_seq_len = 0;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 ||
            max_seq_len <= 0) {
            throw std::invalid_argument("ModelConfig: all dimensions must be positive");
        }
        if (d_model % n_heads != 0) {
            throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
        }
    }

    int head_dim() const { return d_model / n_heads; }

    bool operator==(const ModelConfig& o) const {
        return vocab_size == o.vocab_size && d_model == o.d_model && n_layers == o.n_layers &&
               n_heads == o.n_heads && max_seq_len == o.max_seq_len;
    }
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

// Pre-norm decoder-only transformer with learned positional embeddings and an
// untied output head. Parameters live in an ordered map so every traversal
// (init, optimizer, checkpoint) sees the same deterministic order.
template <typename T>
struct TransformerLM {
    ModelConfig config;
    std::map<std::string, Tensor<T>> params;

    int64_t num_params() const {
        int64_t n = 0;
        for (const auto& [name, t] : params) n += t.numel();
        return n;
    }

    template <typename U>
    TransformerLM<U> cast() const {
        TransformerLM<U> out;
        out.config = config;
        for (const auto& [name, t] : params) out.params.emplace(name, t.template cast<U>());
        return out;
    }
};

using ModelF = TransformerLM<float>;
using ModelD = TransformerLM<double>;

namespace detail {

inline std::string layer_prefix(int layer) {
    return "layers." + std::to_string(layer) + ".";
}

}  // namespace detail

template <typename T>
TransformerLM<T> init_model(const ModelConfig& cfg) {
    cfg.validate();
    TransformerLM<T> m;
    m.config = cfg;
    auto normal2d = [&](const std::string& name, int rows, int cols) {
        Rng rng = derive_stream(cfg.seed, name);
        Tensor<T> t = Tensor<T>::zeros({rows, cols});
        for (T& v : t.data) v = static_cast<T>(rng.normal(0.0, kInitStd));
        m.params.emplace(name, std::move(t));
    };
    auto fill1d = [&](const std::string& name, int n, T value) {
        m.params.emplace(name, Tensor<T>::full({n}, value));
    };
    const int d = cfg.d_model;
    normal2d("tok_emb", cfg.vocab_size, d);
    normal2d("pos_emb", cfg.max_seq_len, d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = detail::layer_prefix(l);
        fill1d(p + "ln1.g", d, T(1));
        fill1d(p + "ln1.b", d, T(0));
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
            normal2d(p + "attn." + w, d, d);
        }
        for (const char* b : {"bq", "bk", "bv", "bo"}) {
            fill1d(p + "attn." + b, d, T(0));
        }
        fill1d(p + "ln2.g", d, T(1));
        fill1d(p + "ln2.b", d, T(0));
        normal2d(p + "mlp.fc.w", d, 4 * d);
        fill1d(p + "mlp.fc.b", 4 * d, T(0));
        normal2d(p + "mlp.proj.w", 4 * d, d);
        fill1d(p + "mlp.proj.b", d, T(0));
    }
    fill1d("ln_f.g", d, T(1));
    fill1d("ln_f.b", d, T(0));
    normal2d("head.w", d, cfg.vocab_size);
    fill1d("head.b", cfg.vocab_size, T(0));
    return m;
}

// Binds every parameter tensor as a tape leaf. The returned map can be
// extended with adapter entries (see lora.hpp) before calling forward_logits.
template <typename T>
std::map<std::string, Var> bind_params(Tape<T>& tape, const TransformerLM<T>& m, bool trainable) {
    std::map<std::string, Var> vars;
    for (const auto& [name, t] : m.params) {
        vars.emplace(name, tape.leaf(t, trainable));
    }
    return vars;
}

// Runs the decoder over one token sequence and returns the [len, vocab]
// logits. Adapter entries, when present in `vars` under
// "<prefix>attn.wq.lora_down"/"..._up" (and likewise for wv), contribute
// lora_scale * (x @ down @ up) on top of the frozen projection.
template <typename T>
Var forward_logits(Tape<T>& tape, const ModelConfig& cfg, const std::map<std::string, Var>& vars,
                   const std::vector<int>& tokens, double lora_scale = 1.0) {
    const int len = static_cast<int>(tokens.size());
    if (len == 0) {
        throw std::invalid_argument("forward_logits: empty token sequence");
    }
    if (len > cfg.max_seq_len) {
        throw std::invalid_argument("forward_logits: sequence longer than max_seq_len");
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw std::invalid_argument("forward_logits: token id out of range");
        }
    }
    auto at = [&](const std::string& name) -> Var {
        auto it = vars.find(name);
        if (it == vars.end()) {
            throw std::invalid_argument("forward_logits: missing parameter " + name);
        }
        return it->second;
    };
    std::vector<int> positions(len);
    std::iota(positions.begin(), positions.end(), 0);
    Var x = tape.add(tape.embedding(at("tok_emb"), tokens),
                     tape.embedding(at("pos_emb"), positions));

    const int hd = cfg.head_dim();
    const T eps = static_cast<T>(kLayerNormEps);
    const T inv_sqrt_hd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    auto project = [&](Var h, const std::string& w_name, const std::string& b_name) -> Var {
        Var out = tape.add_row(tape.matmul(h, at(w_name)), at(b_name));
        auto down = vars.find(w_name + ".lora_down");
        if (down != vars.end()) {
            Var delta = tape.matmul(tape.matmul(h, down->second), at(w_name + ".lora_up"));
            out = tape.add(out, tape.scale(delta, static_cast<T>(lora_scale)));
        }
        return out;
    };

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = detail::layer_prefix(l);
        Var h = tape.layer_norm(x, at(p + "ln1.g"), at(p + "ln1.b"), eps);
        Var q = project(h, p + "attn.wq", p + "attn.bq");
        Var k = project(h, p + "attn.wk", p + "attn.bk");
        Var v = project(h, p + "attn.wv", p + "attn.bv");
        std::vector<Var> heads;
        heads.reserve(cfg.n_heads);
        for (int hidx = 0; hidx < cfg.n_heads; ++hidx) {
            const int c0 = hidx * hd, c1 = (hidx + 1) * hd;
            Var qh = tape.slice_cols(q, c0, c1);
            Var kh = tape.slice_cols(k, c0, c1);
            Var vh = tape.slice_cols(v, c0, c1);
            Var scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_hd);
            Var probs = tape.causal_softmax(scores);
            heads.push_back(tape.matmul(probs, vh));
        }
        Var ctx = cfg.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
        Var attn_out = tape.add_row(tape.matmul(ctx, at(p + "attn.wo")), at(p + "attn.bo"));
        x = tape.add(x, attn_out);

        Var h2 = tape.layer_norm(x, at(p + "ln2.g"), at(p + "ln2.b"), eps);
        Var up = tape.gelu(tape.add_row(tape.matmul(h2, at(p + "mlp.fc.w")), at(p + "mlp.fc.b")));
        Var mlp_out = tape.add_row(tape.matmul(up, at(p + "mlp.proj.w")), at(p + "mlp.proj.b"));
        x = tape.add(x, mlp_out);
    }
    Var hf = tape.layer_norm(x, at("ln_f.g"), at("ln_f.b"), eps);
    return tape.add_row(tape.matmul(hf, at("head.w")), at("head.b"));
}

// Logits without gradient tracking; adapter-aware when extra vars are bound by
// the caller through the lora.hpp helpers.
template <typename T>
Tensor<T> forward_logits_nograd(const TransformerLM<T>& m, const std::vector<int>& tokens) {
    Tape<T> tape;
    auto vars = bind_params(tape, m, false);
    Var logits = forward_logits(tape, m.config, vars, tokens);
    return tape.value(logits);
}

struct DecodeConfig {
    int max_new_tokens = 0;
    double temperature = 1.0;
    bool greedy = true;
    int eos_token = -1;  // -1 disables early stopping
};

// Greedy or ancestral decoding. Recomputes the full prefix each step (no KV
// cache at this scale); when the context outgrows max_seq_len the oldest
// tokens are cropped away. Returns only the newly generated tokens.
template <typename T, typename LogitsFn>
std::vector<int> generate_with(const ModelConfig& cfg, LogitsFn&& logits_fn,
                               const std::vector<int>& prompt, const DecodeConfig& dc,
                               Rng* rng = nullptr) {
    if (prompt.empty()) {
        throw std::invalid_argument("generate: empty prompt");
    }
    if (!dc.greedy && rng == nullptr) {
        throw std::invalid_argument("generate: sampling requires an rng");
    }
    std::vector<int> context = prompt;
    std::vector<int> out;
    for (int step = 0; step < dc.max_new_tokens; ++step) {
        if (static_cast<int>(context.size()) > cfg.max_seq_len) {
            context.erase(context.begin(),
                          context.end() - cfg.max_seq_len);
        }
        Tensor<T> logits = logits_fn(context);
        const int last = static_cast<int>(context.size()) - 1;
        std::vector<T> row(logits.data.begin() + static_cast<size_t>(last) * cfg.vocab_size,
                           logits.data.begin() + static_cast<size_t>(last + 1) * cfg.vocab_size);
        int tok = 0;
        if (dc.greedy) {
            for (int j = 1; j < cfg.vocab_size; ++j) {
                if (row[j] > row[tok]) tok = j;
            }
        } else {
            Tensor<T> rt = Tensor<T>::from_vector({1, cfg.vocab_size}, row);
            Tensor<T> probs = softmax_rows(rt, dc.temperature);
            std::vector<double> pd(probs.data.begin(), probs.data.end());
            tok = rng->categorical(pd);
        }
        out.push_back(tok);
        context.push_back(tok);
        if (tok == dc.eos_token) break;
    }
    return out;
}

template <typename T>
std::vector<int> generate(const TransformerLM<T>& m, const std::vector<int>& prompt,
                          const DecodeConfig& dc, Rng* rng = nullptr) {
    return generate_with<T>(
        m.config, [&](const std::vector<int>& ctx) { return forward_logits_nograd(m, ctx); },
        prompt, dc, rng);
}

// Repeated no-grad inference against a frozen snapshot of the parameters:
// binds them to an internal tape once and rolls the graph back before every
// forward, so per-call cost is compute only, not parameter copies.
template <typename T>
class FrozenForward {
public:
    explicit FrozenForward(const TransformerLM<T>& m) : cfg_(m.config) {
        vars_ = bind_params(tape_, m, false);
        base_mark_ = tape_.mark();
    }

    const ModelConfig& config() const { return cfg_; }

    Tensor<T> logits(const std::vector<int>& tokens) {
        tape_.reset_to(base_mark_);
        return tape_.value(forward_logits(tape_, cfg_, vars_, tokens));
    }

    std::vector<int> generate(const std::vector<int>& prompt, const DecodeConfig& dc,
                              Rng* rng = nullptr) {
        return generate_with<T>(
            cfg_, [&](const std::vector<int>& ctx) { return logits(ctx); }, prompt, dc, rng);
    }

private:
    ModelConfig cfg_;
    Tape<T> tape_;
    std::map<std::string, Var> vars_;
    size_t base_mark_ = 0;
};

}  // namespace kdlab
