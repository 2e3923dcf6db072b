#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "kdlab/tape.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

enum class Divergence { forward_kl, reverse_kl, jsd };
enum class KlDirection { forward, reverse };

inline const char* to_string(Divergence d) {
    switch (d) {
        case Divergence::forward_kl: return "forward_kl";
        case Divergence::reverse_kl: return "reverse_kl";
        case Divergence::jsd: return "jsd";
    }
    return "?";
}

inline Divergence divergence_from_string(const std::string& s) {
    if (s == "forward_kl") return Divergence::forward_kl;
    if (s == "reverse_kl") return Divergence::reverse_kl;
    if (s == "jsd") return Divergence::jsd;
    throw std::invalid_argument("unknown divergence: " + s);
}

struct DistillConfig {
    Divergence divergence = Divergence::forward_kl;
    double temperature = 1.0;
    double alpha = 0.5;    // KL weight inside the teacher-side loss
    double jsd_beta = 0.5;

    void validate() const {
        if (!(temperature > 0.0)) {
            throw std::invalid_argument("DistillConfig: temperature must be positive");
        }
        if (alpha < 0.0 || alpha > 1.0) {
            throw std::invalid_argument("DistillConfig: alpha must lie in [0, 1]");
        }
        if (!(jsd_beta > 0.0 && jsd_beta < 1.0)) {
            throw std::invalid_argument("DistillConfig: jsd_beta must lie in (0, 1)");
        }
    }
};

// Per-row supervision for one forwarded sequence: targets[i] is the token the
// logits row i should predict and mask[i] selects the rows that train. Rows
// with mask 0 carry a dummy target and contribute nothing to any loss.
struct SeqSupervision {
    std::vector<int> targets;
    std::vector<uint8_t> mask;

    int64_t masked_count() const {
        int64_t n = 0;
        for (uint8_t m : mask) n += m != 0;
        return n;
    }
};

// Aligned teacher/student logits over the same slots, value-level (the
// spec-facing convenience shape: one sequence per batch row, padded).
template <typename T>
struct TokenDistributions {
    std::vector<Tensor<T>> teacher_logits;  // per sequence, [len, C]
    std::vector<Tensor<T>> student_logits;  // per sequence, [len, C]
    std::vector<SeqSupervision> supervision;

    void validate() const {
        if (teacher_logits.size() != student_logits.size() ||
            teacher_logits.size() != supervision.size()) {
            throw std::invalid_argument("TokenDistributions: sequence counts disagree");
        }
        for (size_t i = 0; i < teacher_logits.size(); ++i) {
            if (!teacher_logits[i].same_shape(student_logits[i])) {
                throw std::invalid_argument("TokenDistributions: logits shapes disagree");
            }
            const auto rows = static_cast<size_t>(teacher_logits[i].shape[0]);
            if (supervision[i].targets.size() != rows || supervision[i].mask.size() != rows) {
                throw std::invalid_argument("TokenDistributions: supervision length mismatch");
            }
        }
    }
};

namespace detail {

inline int64_t total_masked(std::span<const SeqSupervision> sup) {
    int64_t n = 0;
    for (const auto& s : sup) n += s.masked_count();
    return n;
}

template <typename T>
void check_batch_sizes(size_t logits, size_t sup, const char* op) {
    if (logits != sup) {
        throw std::invalid_argument(std::string(op) + ": sequence counts disagree");
    }
    if (logits == 0) {
        throw std::invalid_argument(std::string(op) + ": empty batch");
    }
}

}  // namespace detail

// Masked mean of -log p(target). Prompt rows (mask 0) contribute zero.
template <typename T>
Var mle_loss(Tape<T>& tape, std::span<const Var> logits, std::span<const SeqSupervision> sup) {
    detail::check_batch_sizes<T>(logits.size(), sup.size(), "mle_loss");
    const int64_t total = detail::total_masked(sup);
    if (total == 0) {
        throw std::invalid_argument("mle_loss: mask selects no positions");
    }
    Var acc{};
    for (size_t i = 0; i < logits.size(); ++i) {
        Var lp = tape.log_softmax_rows_op(logits[i], T(1));
        Var picked = tape.gather_cols(lp, sup[i].targets);
        Var s = tape.masked_sum(picked, sup[i].mask);
        acc = acc.valid() ? tape.add(acc, s) : s;
    }
    return tape.scale(acc, T(-1) / static_cast<T>(total));
}

// Temperature-scaled KL between teacher and student distributions, masked
// mean times tau^2. Forward weights by the teacher distribution, reverse by
// the student's; the teacher side is a constant in both directions.
template <typename T>
Var kd_kl_loss(Tape<T>& tape, std::span<const Var> student_logits,
               std::span<const Tensor<T>> teacher_logits, std::span<const SeqSupervision> sup,
               KlDirection direction, double temperature) {
    detail::check_batch_sizes<T>(student_logits.size(), sup.size(), "kd_kl_loss");
    if (teacher_logits.size() != student_logits.size()) {
        throw std::invalid_argument("kd_kl_loss: sequence counts disagree");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("kd_kl_loss: temperature must be positive");
    }
    const int64_t total = detail::total_masked(sup);
    if (total == 0) {
        throw std::invalid_argument("kd_kl_loss: mask selects no positions");
    }
    const T tau = static_cast<T>(temperature);
    Var acc{};
    for (size_t i = 0; i < student_logits.size(); ++i) {
        if (!tape.value(student_logits[i]).same_shape(teacher_logits[i])) {
            throw std::invalid_argument("kd_kl_loss: logits shapes disagree");
        }
        Var t_probs = tape.constant(softmax_rows(teacher_logits[i], temperature));
        Var t_logp = tape.constant(log_softmax_rows(teacher_logits[i], temperature));
        Var row_kl{};
        if (direction == KlDirection::forward) {
            Var s_logp = tape.log_softmax_rows_op(student_logits[i], tau);
            row_kl = tape.row_sum(tape.mul(t_probs, tape.sub(t_logp, s_logp)));
        } else {
            Var s_probs = tape.softmax_rows_op(student_logits[i], tau);
            Var s_logp = tape.log_softmax_rows_op(student_logits[i], tau);
            row_kl = tape.row_sum(tape.mul(s_probs, tape.sub(s_logp, t_logp)));
        }
        Var s = tape.masked_sum(row_kl, sup[i].mask);
        acc = acc.valid() ? tape.add(acc, s) : s;
    }
    return tape.scale(acc, tau * tau / static_cast<T>(total));
}

// beta * KL(p_t || m) + (1 - beta) * KL(p_s || m), m = beta*p_t + (1-beta)*p_s,
// masked mean. No tau^2 factor: the value stays a divergence between the two
// tempered distributions (bounded by ln 2 at beta = 0.5).
template <typename T>
Var jsd_loss(Tape<T>& tape, std::span<const Var> student_logits,
             std::span<const Tensor<T>> teacher_logits, std::span<const SeqSupervision> sup,
             double beta, double temperature = 1.0) {
    detail::check_batch_sizes<T>(student_logits.size(), sup.size(), "jsd_loss");
    if (!(beta > 0.0 && beta < 1.0)) {
        throw std::invalid_argument("jsd_loss: beta must lie in (0, 1)");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("jsd_loss: temperature must be positive");
    }
    const int64_t total = detail::total_masked(sup);
    if (total == 0) {
        throw std::invalid_argument("jsd_loss: mask selects no positions");
    }
    const T b = static_cast<T>(beta);
    Var acc{};
    for (size_t i = 0; i < student_logits.size(); ++i) {
        Var t_probs = tape.constant(softmax_rows(teacher_logits[i], temperature));
        Var t_logp = tape.constant(log_softmax_rows(teacher_logits[i], temperature));
        Var s_probs = tape.softmax_rows_op(student_logits[i], static_cast<T>(temperature));
        Var s_logp = tape.log_softmax_rows_op(student_logits[i], static_cast<T>(temperature));
        Var mix = tape.add(tape.scale(t_probs, b), tape.scale(s_probs, T(1) - b));
        Var log_mix = tape.log_elem(mix);
        Var kl_t = tape.row_sum(tape.mul(t_probs, tape.sub(t_logp, log_mix)));
        Var kl_s = tape.row_sum(tape.mul(s_probs, tape.sub(s_logp, log_mix)));
        Var row = tape.add(tape.scale(kl_t, b), tape.scale(kl_s, T(1) - b));
        Var s = tape.masked_sum(row, sup[i].mask);
        acc = acc.valid() ? tape.add(acc, s) : s;
    }
    return tape.scale(acc, T(1) / static_cast<T>(total));
}

// Dispatch used by the distillation trainers.
template <typename T>
Var distill_loss(Tape<T>& tape, std::span<const Var> student_logits,
                 std::span<const Tensor<T>> teacher_logits, std::span<const SeqSupervision> sup,
                 const DistillConfig& cfg) {
    cfg.validate();
    switch (cfg.divergence) {
        case Divergence::forward_kl:
            return kd_kl_loss(tape, student_logits, teacher_logits, sup, KlDirection::forward,
                              cfg.temperature);
        case Divergence::reverse_kl:
            return kd_kl_loss(tape, student_logits, teacher_logits, sup, KlDirection::reverse,
                              cfg.temperature);
        case Divergence::jsd:
            return jsd_loss(tape, student_logits, teacher_logits, sup, cfg.jsd_beta,
                            cfg.temperature);
    }
    throw std::logic_error("distill_loss: unreachable");
}

template <typename T>
struct TeacherLossParts {
    Var total;
    Var kl_mean;   // KL(student || adapted teacher), masked mean
    Var mle_mean;  // MLE of the adapted teacher on ground truth
};

// Adapter-side objective: alpha * KL(p_s || p_ta) + (1 - alpha) * MLE(theta_ta).
// The student distribution enters as a constant; gradient reaches only the
// tensors that were bound trainable under the adapted-teacher logits.
template <typename T>
TeacherLossParts<T> teacher_loss(Tape<T>& tape, std::span<const Var> adapted_teacher_logits,
                                 std::span<const Tensor<T>> student_logits,
                                 std::span<const SeqSupervision> sup, double alpha) {
    detail::check_batch_sizes<T>(adapted_teacher_logits.size(), sup.size(), "teacher_loss");
    if (alpha < 0.0 || alpha > 1.0) {
        throw std::invalid_argument("teacher_loss: alpha must lie in [0, 1]");
    }
    bool trainable = false;
    for (Var v : adapted_teacher_logits) trainable = trainable || tape.requires_grad(v);
    if (!trainable) {
        throw std::invalid_argument("teacher_loss: no trainable teacher parameters");
    }
    const int64_t total = detail::total_masked(sup);
    if (total == 0) {
        throw std::invalid_argument("teacher_loss: mask selects no positions");
    }
    // KL(p_s || p_ta) = sum p_s (log p_s - log p_ta); only log p_ta is live.
    Var acc{};
    for (size_t i = 0; i < adapted_teacher_logits.size(); ++i) {
        Var s_probs = tape.constant(softmax_rows(student_logits[i], 1.0));
        Var s_logp = tape.constant(log_softmax_rows(student_logits[i], 1.0));
        Var t_logp = tape.log_softmax_rows_op(adapted_teacher_logits[i], T(1));
        Var row_kl = tape.row_sum(tape.mul(s_probs, tape.sub(s_logp, t_logp)));
        Var s = tape.masked_sum(row_kl, sup[i].mask);
        acc = acc.valid() ? tape.add(acc, s) : s;
    }
    TeacherLossParts<T> parts;
    parts.kl_mean = tape.scale(acc, T(1) / static_cast<T>(total));
    parts.mle_mean = mle_loss(tape, adapted_teacher_logits, sup);
    parts.total = tape.add(tape.scale(parts.kl_mean, static_cast<T>(alpha)),
                           tape.scale(parts.mle_mean, static_cast<T>(1.0 - alpha)));
    return parts;
}

// Student-side objective: KL(p_ta || p_s), i.e. forward KL against the
// adapted teacher at tau = 1. Deliberately the same code path as the standard
// forward-KD loss so the two regimes agree bit-for-bit when the adapter is
// inert.
template <typename T>
Var student_loss(Tape<T>& tape, std::span<const Var> student_logits,
                 std::span<const Tensor<T>> adapted_teacher_logits,
                 std::span<const SeqSupervision> sup) {
    return kd_kl_loss(tape, student_logits, adapted_teacher_logits, sup, KlDirection::forward,
                      1.0);
}

// ---- value-level wrappers (no gradients), single source of truth ----

template <typename T>
double mle_loss_value(const Tensor<T>& logits, const std::vector<int>& targets,
                      const std::vector<uint8_t>& mask) {
    Tape<T> tape;
    Var v = tape.leaf(logits, false);
    SeqSupervision sup{targets, mask};
    Var loss = mle_loss(tape, std::span<const Var>(&v, 1), std::span<const SeqSupervision>(&sup, 1));
    return static_cast<double>(tape.scalar(loss));
}

template <typename T>
double kd_kl_loss_value(const TokenDistributions<T>& dists, double temperature,
                        KlDirection direction) {
    dists.validate();
    Tape<T> tape;
    std::vector<Var> student;
    for (const auto& t : dists.student_logits) student.push_back(tape.leaf(t, false));
    Var loss = kd_kl_loss(tape, std::span<const Var>(student),
                          std::span<const Tensor<T>>(dists.teacher_logits),
                          std::span<const SeqSupervision>(dists.supervision), direction,
                          temperature);
    return static_cast<double>(tape.scalar(loss));
}

template <typename T>
double jsd_loss_value(const TokenDistributions<T>& dists, double beta, double temperature = 1.0) {
    dists.validate();
    Tape<T> tape;
    std::vector<Var> student;
    for (const auto& t : dists.student_logits) student.push_back(tape.leaf(t, false));
    Var loss = jsd_loss(tape, std::span<const Var>(student),
                        std::span<const Tensor<T>>(dists.teacher_logits),
                        std::span<const SeqSupervision>(dists.supervision), beta, temperature);
    return static_cast<double>(tape.scalar(loss));
}

}  // namespace kdlab
