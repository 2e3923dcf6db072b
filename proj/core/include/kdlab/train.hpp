#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdlab/data.hpp"
#include "kdlab/lora.hpp"
#include "kdlab/losses.hpp"
#include "kdlab/model.hpp"
#include "kdlab/optim.hpp"

namespace kdlab {

enum class TrainMethod { sft, standard_kd, on_policy_kd, okd };

inline const char* to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::sft: return "sft";
        case TrainMethod::standard_kd: return "standard_kd";
        case TrainMethod::on_policy_kd: return "on_policy_kd";
        case TrainMethod::okd: return "okd";
    }
    return "?";
}

inline TrainMethod train_method_from_string(const std::string& s) {
    if (s == "sft") return TrainMethod::sft;
    if (s == "standard_kd") return TrainMethod::standard_kd;
    if (s == "on_policy_kd") return TrainMethod::on_policy_kd;
    if (s == "okd") return TrainMethod::okd;
    throw std::invalid_argument("unknown train method: " + s);
}

struct TrainConfig {
    TrainMethod method = TrainMethod::standard_kd;
    int64_t steps = 0;
    double learning_rate = 1e-3;
    int batch_size = 1;
    double warmup_fraction = 0.03;
    uint64_t seed = 0;
    double sgo_fraction = 0.0;  // on_policy_kd only
    DistillConfig distill;
    double clip_norm = 1.0;              // <= 0 disables clipping
    double adapter_learning_rate = -1.0;  // < 0 follows learning_rate
    LoraConfig lora;                      // okd adapter settings
    int sgo_max_new_tokens = 64;
    double sgo_temperature = 1.0;

    void validate() const {
        if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be non-negative");
        if (learning_rate < 0.0) {
            throw std::invalid_argument("TrainConfig: learning_rate must be non-negative");
        }
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
            throw std::invalid_argument("TrainConfig: warmup_fraction must lie in [0, 1)");
        }
        if (sgo_fraction < 0.0 || sgo_fraction > 1.0) {
            throw std::invalid_argument("TrainConfig: sgo_fraction must lie in [0, 1]");
        }
        if (sgo_max_new_tokens < 1) {
            throw std::invalid_argument("TrainConfig: sgo_max_new_tokens must be >= 1");
        }
        if (!(sgo_temperature > 0.0)) {
            throw std::invalid_argument("TrainConfig: sgo_temperature must be positive");
        }
        distill.validate();
    }
};

struct StepRecord {
    int64_t step = 0;
    std::string method;
    double loss = 0.0;      // the loss whose gradient trained the student
    double kl_term = 0.0;   // okd: KL part of the adapter loss
    double mle_term = 0.0;  // okd: MLE part of the adapter loss
    double lr = 0.0;
    double grad_norm = 0.0;  // student gradient norm, pre-clip
    int sgo_rows = 0;        // rows whose response was student-generated
    double wall_ms = 0.0;
};

void write_step_log(const std::string& path, std::span<const StepRecord> log);

template <typename T>
struct TrainResult {
    TransformerLM<T> student;
    LoraAdapter<T> adapter;  // meaningful only when has_adapter
    bool has_adapter = false;
    std::vector<StepRecord> log;
};

// Deterministic cyclic batch source; every trainer with the same (records,
// max_len, batch_size, seed) sees the identical batch sequence.
class BatchStream {
public:
    BatchStream(std::span<const InstructionRecord> records, int max_len, int batch_size,
                uint64_t seed) {
        batches_ = build_batches(records, max_len, batch_size, seed);
        if (batches_.empty()) {
            throw std::invalid_argument("BatchStream: no usable records");
        }
    }

    const TokenBatch& next() {
        const TokenBatch& b = batches_[pos_];
        pos_ = (pos_ + 1) % batches_.size();
        return b;
    }

    size_t size() const { return batches_.size(); }

private:
    std::vector<TokenBatch> batches_;
    size_t pos_ = 0;
};

namespace detail {

// Unpadded rows plus shifted supervision: logits row t is scored against
// token t+1, so each row's final logits position is always masked out.
struct StepBatch {
    std::vector<std::vector<int>> rows;
    std::vector<SeqSupervision> sup;
};

inline StepBatch make_step_batch(const TokenBatch& b) {
    StepBatch out;
    for (int i = 0; i < b.size(); ++i) {
        const int len = b.lengths[i];
        std::vector<int> row(b.token_ids[i].begin(), b.token_ids[i].begin() + len);
        SeqSupervision s;
        s.targets.assign(len, 0);
        s.mask.assign(len, 0);
        for (int t = 0; t + 1 < len; ++t) {
            s.targets[t] = row[t + 1];
            s.mask[t] = b.loss_mask[i][t + 1];
        }
        out.rows.push_back(std::move(row));
        out.sup.push_back(std::move(s));
    }
    return out;
}

inline int prompt_length(const TokenBatch& b, int row) {
    for (int t = 0; t < b.lengths[row]; ++t) {
        if (b.loss_mask[row][t]) return t;
    }
    return b.lengths[row];
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

// backward + gradient collection over the trainable vars + clip + Adam.
// Returns the pre-clip global gradient norm.
template <typename T>
double apply_update(Tape<T>& tape, Var loss, const std::map<std::string, Var>& vars,
                    std::map<std::string, Tensor<T>>& params, AdamState<T>& opt, double lr,
                    double clip_norm) {
    tape.backward(loss);
    std::map<std::string, std::vector<T>> grads;
    for (const auto& [name, v] : vars) {
        if (tape.requires_grad(v)) grads.emplace(name, tape.grad(v));
    }
    const double norm = clip_grads(grads, clip_norm);
    adam_step(params, grads, opt, lr);
    return norm;
}

template <typename T>
void check_shared_vocab(const TransformerLM<T>& teacher, const TransformerLM<T>& student) {
    if (teacher.config.vocab_size != student.config.vocab_size) {
        throw std::invalid_argument("trainer: teacher/student vocabulary mismatch");
    }
}

}  // namespace detail

template <typename T>
TrainResult<T> train_sft(TransformerLM<T> model, std::span<const InstructionRecord> records,
                         const TrainConfig& cfg) {
    cfg.validate();
    BatchStream stream(records, model.config.max_seq_len, cfg.batch_size, cfg.seed);
    AdamState<T> opt;
    TrainResult<T> result;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        auto sb = detail::make_step_batch(stream.next());
        Tape<T> tape;
        auto vars = bind_params(tape, model, true);
        std::vector<Var> logits;
        for (const auto& row : sb.rows) {
            logits.push_back(forward_logits(tape, model.config, vars, row));
        }
        Var loss = mle_loss<T>(tape, logits, sb.sup);
        const double lr = lr_at(step, cfg.steps, cfg.learning_rate, cfg.warmup_fraction);
        const double gn = detail::apply_update(tape, loss, vars, model.params, opt, lr,
                                               cfg.clip_norm);
        result.log.push_back({step, "sft", static_cast<double>(tape.scalar(loss)), 0.0, 0.0, lr,
                              gn, 0, detail::elapsed_ms(t0)});
    }
    result.student = std::move(model);
    return result;
}

template <typename T>
TrainResult<T> train_standard_kd(const TransformerLM<T>& teacher, TransformerLM<T> student,
                                 std::span<const InstructionRecord> records,
                                 const TrainConfig& cfg) {
    cfg.validate();
    detail::check_shared_vocab(teacher, student);
    const int max_len = std::min(teacher.config.max_seq_len, student.config.max_seq_len);
    BatchStream stream(records, max_len, cfg.batch_size, cfg.seed);
    FrozenForward<T> teacher_fwd(teacher);
    AdamState<T> opt;
    TrainResult<T> result;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        auto sb = detail::make_step_batch(stream.next());
        std::vector<Tensor<T>> t_logits;
        for (const auto& row : sb.rows) t_logits.push_back(teacher_fwd.logits(row));
        Tape<T> tape;
        auto vars = bind_params(tape, student, true);
        std::vector<Var> s_logits;
        for (const auto& row : sb.rows) {
            s_logits.push_back(forward_logits(tape, student.config, vars, row));
        }
        Var loss = distill_loss<T>(tape, s_logits, t_logits, sb.sup, cfg.distill);
        const double lr = lr_at(step, cfg.steps, cfg.learning_rate, cfg.warmup_fraction);
        const double gn = detail::apply_update(tape, loss, vars, student.params, opt, lr,
                                               cfg.clip_norm);
        result.log.push_back({step, "standard_kd", static_cast<double>(tape.scalar(loss)), 0.0,
                              0.0, lr, gn, 0, detail::elapsed_ms(t0)});
    }
    result.student = std::move(student);
    return result;
}

// With probability sgo_fraction, a row's response tokens are replaced by a
// sampled continuation from the current student before distillation, so the
// divergence is computed over the student's own contexts.
template <typename T>
TrainResult<T> train_on_policy_kd(const TransformerLM<T>& teacher, TransformerLM<T> student,
                                  std::span<const InstructionRecord> records,
                                  const TrainConfig& cfg) {
    cfg.validate();
    detail::check_shared_vocab(teacher, student);
    const int max_len = std::min(teacher.config.max_seq_len, student.config.max_seq_len);
    BatchStream stream(records, max_len, cfg.batch_size, cfg.seed);
    FrozenForward<T> teacher_fwd(teacher);
    AdamState<T> opt;
    TrainResult<T> result;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const TokenBatch& ground = stream.next();
        auto sb = detail::make_step_batch(ground);
        int sgo_rows = 0;
        if (cfg.sgo_fraction > 0.0) {
            Rng sgo_rng = derive_stream(cfg.seed, "sgo", static_cast<uint64_t>(step));
            FrozenForward<T> student_snapshot(student);
            for (int i = 0; i < ground.size(); ++i) {
                if (sgo_rng.uniform01() >= cfg.sgo_fraction) continue;
                const int plen = detail::prompt_length(ground, i);
                if (plen < 1 || plen >= max_len) continue;
                std::vector<int> prompt(sb.rows[i].begin(), sb.rows[i].begin() + plen);
                DecodeConfig dc;
                dc.max_new_tokens = std::min(cfg.sgo_max_new_tokens, max_len - plen);
                dc.greedy = false;
                dc.temperature = cfg.sgo_temperature;
                dc.eos_token = tokens::kEos;
                std::vector<int> gen = student_snapshot.generate(prompt, dc, &sgo_rng);
                if (gen.empty()) continue;
                std::vector<int> row = prompt;
                row.insert(row.end(), gen.begin(), gen.end());
                SeqSupervision sup;
                const int len = static_cast<int>(row.size());
                sup.targets.assign(len, 0);
                sup.mask.assign(len, 0);
                for (int t = 0; t + 1 < len; ++t) {
                    sup.targets[t] = row[t + 1];
                    sup.mask[t] = t + 1 >= plen ? 1 : 0;
                }
                sb.rows[i] = std::move(row);
                sb.sup[i] = std::move(sup);
                ++sgo_rows;
            }
        }
        std::vector<Tensor<T>> t_logits;
        for (const auto& row : sb.rows) t_logits.push_back(teacher_fwd.logits(row));
        Tape<T> tape;
        auto vars = bind_params(tape, student, true);
        std::vector<Var> s_logits;
        for (const auto& row : sb.rows) {
            s_logits.push_back(forward_logits(tape, student.config, vars, row));
        }
        Var loss = distill_loss<T>(tape, s_logits, t_logits, sb.sup, cfg.distill);
        const double lr = lr_at(step, cfg.steps, cfg.learning_rate, cfg.warmup_fraction);
        const double gn = detail::apply_update(tape, loss, vars, student.params, opt, lr,
                                               cfg.clip_norm);
        result.log.push_back({step, "on_policy_kd", static_cast<double>(tape.scalar(loss)), 0.0,
                              0.0, lr, gn, sgo_rows, detail::elapsed_ms(t0)});
    }
    result.student = std::move(student);
    return result;
}

// Online distillation: one forward per model per step, adapter update from
// L_t, then student update from L_s — both losses built from the
// distributions cached before either update.
template <typename T>
TrainResult<T> train_okd(const TransformerLM<T>& teacher, TransformerLM<T> student,
                         std::span<const InstructionRecord> records, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_shared_vocab(teacher, student);
    const int max_len = std::min(teacher.config.max_seq_len, student.config.max_seq_len);
    BatchStream stream(records, max_len, cfg.batch_size, cfg.seed);
    LoraAdapter<T> adapter = attach_lora(teacher, cfg.lora);
    const double adapter_peak =
        cfg.adapter_learning_rate < 0.0 ? cfg.learning_rate : cfg.adapter_learning_rate;

    Tape<T> teacher_tape;
    auto base_vars = bind_params(teacher_tape, teacher, false);
    const size_t base_mark = teacher_tape.mark();

    AdamState<T> opt_student, opt_adapter;
    TrainResult<T> result;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        auto sb = detail::make_step_batch(stream.next());

        teacher_tape.reset_to(base_mark);
        auto teacher_vars = base_vars;
        bind_adapter(teacher_tape, adapter, true, teacher_vars);
        std::vector<Var> t_vars;
        std::vector<Tensor<T>> t_logits;
        for (const auto& row : sb.rows) {
            Var v = forward_logits(teacher_tape, teacher.config, teacher_vars, row,
                                   adapter.config.scale);
            t_vars.push_back(v);
            t_logits.push_back(teacher_tape.value(v));
        }

        Tape<T> student_tape;
        auto student_vars = bind_params(student_tape, student, true);
        std::vector<Var> s_vars;
        std::vector<Tensor<T>> s_logits;
        for (const auto& row : sb.rows) {
            Var v = forward_logits(student_tape, student.config, student_vars, row);
            s_vars.push_back(v);
            s_logits.push_back(student_tape.value(v));
        }

        const double lr = lr_at(step, cfg.steps, cfg.learning_rate, cfg.warmup_fraction);
        const double adapter_lr = lr_at(step, cfg.steps, adapter_peak, cfg.warmup_fraction);

        auto parts = teacher_loss<T>(teacher_tape, t_vars, s_logits, sb.sup, cfg.distill.alpha);
        const double kl_term = static_cast<double>(teacher_tape.scalar(parts.kl_mean));
        const double mle_term = static_cast<double>(teacher_tape.scalar(parts.mle_mean));
        detail::apply_update(teacher_tape, parts.total, teacher_vars, adapter.params, opt_adapter,
                             adapter_lr, cfg.clip_norm);

        Var ls = student_loss<T>(student_tape, s_vars, t_logits, sb.sup);
        const double gn = detail::apply_update(student_tape, ls, student_vars, student.params,
                                               opt_student, lr, cfg.clip_norm);
        result.log.push_back({step, "okd", static_cast<double>(student_tape.scalar(ls)), kl_term,
                              mle_term, lr, gn, 0, detail::elapsed_ms(t0)});
    }
    result.student = std::move(student);
    result.adapter = std::move(adapter);
    result.has_adapter = true;
    return result;
}

// Dispatch on cfg.method; `teacher` may be null only for sft.
template <typename T>
TrainResult<T> train(const TransformerLM<T>* teacher, TransformerLM<T> student,
                     std::span<const InstructionRecord> records, const TrainConfig& cfg) {
    if (cfg.method != TrainMethod::sft && teacher == nullptr) {
        throw std::invalid_argument("train: method requires a teacher");
    }
    switch (cfg.method) {
        case TrainMethod::sft: return train_sft(std::move(student), records, cfg);
        case TrainMethod::standard_kd:
            return train_standard_kd(*teacher, std::move(student), records, cfg);
        case TrainMethod::on_policy_kd:
            return train_on_policy_kd(*teacher, std::move(student), records, cfg);
        case TrainMethod::okd: return train_okd(*teacher, std::move(student), records, cfg);
    }
    throw std::logic_error("train: unreachable");
}

}  // namespace kdlab
