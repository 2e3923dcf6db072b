#include "kdlab/metrics.hpp"

#include <cmath>

#include "kdlab/rng.hpp"

namespace kdlab {

RougeScore rouge_l(std::span<const int> candidate, std::span<const int> reference) {
    if (candidate.empty() || reference.empty()) {
        throw std::invalid_argument("rouge_l: sequences must be nonempty");
    }
    const size_t nc = candidate.size(), nr = reference.size();
    // Classic LCS DP with a rolling row.
    std::vector<int64_t> prev(nr + 1, 0), cur(nr + 1, 0);
    for (size_t i = 1; i <= nc; ++i) {
        for (size_t j = 1; j <= nr; ++j) {
            if (candidate[i - 1] == reference[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    RougeScore s;
    s.lcs = prev[nr];
    s.precision = static_cast<double>(s.lcs) / static_cast<double>(nc);
    s.recall = static_cast<double>(s.lcs) / static_cast<double>(nr);
    s.f1 = s.lcs == 0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

namespace {

double kl_between(const std::vector<double>& p, const std::vector<double>& q) {
    double kl = 0.0;
    for (size_t c = 0; c < p.size(); ++c) {
        if (p[c] <= 0.0) continue;
        kl += p[c] * (std::log(p[c]) - std::log(std::max(q[c], kProbFloor)));
    }
    return kl;
}

struct McEstimate {
    double mean = 0.0;
    double se = 0.0;
};

// Mean and standard error of per-trajectory accumulated KL, with contexts
// advanced by sampling from `behavior` (the rollout policy).
template <typename BehaviorFn>
McEstimate rollout_accumulated_kl(SequenceDistribution& teacher, SequenceDistribution& student,
                                  std::span<const std::vector<int>> prompts, int horizon,
                                  int mc_samples, uint64_t seed, const char* stream_name,
                                  BehaviorFn&& behavior) {
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < mc_samples; ++s) {
        Rng rng = derive_stream(seed, stream_name, static_cast<uint64_t>(s));
        std::vector<int> ctx = prompts[static_cast<size_t>(s) % prompts.size()];
        double acc = 0.0;
        for (int t = 0; t < horizon; ++t) {
            const std::vector<double> p = teacher.next_probs(ctx);
            const std::vector<double> q = student.next_probs(ctx);
            acc += kl_between(p, q);
            ctx.push_back(rng.categorical(behavior(p, q)));
        }
        sum += acc;
        sum_sq += acc * acc;
    }
    McEstimate est;
    est.mean = sum / mc_samples;
    if (mc_samples > 1) {
        const double var =
            std::max(0.0, (sum_sq - sum * sum / mc_samples) / (mc_samples - 1));
        est.se = std::sqrt(var / mc_samples);
    }
    return est;
}

}  // namespace

ExposureReport exposure_metrics(SequenceDistribution& teacher, SequenceDistribution& student,
                                std::span<const std::vector<int>> prompts, int horizon,
                                int mc_samples, uint64_t seed) {
    if (horizon < 1) {
        throw std::invalid_argument("exposure_metrics: horizon must be >= 1");
    }
    if (mc_samples < 1) {
        throw std::invalid_argument("exposure_metrics: mc_samples must be >= 1");
    }
    if (prompts.empty()) {
        throw std::invalid_argument("exposure_metrics: no prompts");
    }
    if (teacher.vocab_size() != student.vocab_size()) {
        throw std::invalid_argument("exposure_metrics: vocabulary mismatch");
    }
    // R(l): contexts follow the student's free run.
    const McEstimate r = rollout_accumulated_kl(
        teacher, student, prompts, horizon, mc_samples, seed, "mc_free",
        [](const std::vector<double>&, const std::vector<double>& q) -> const std::vector<double>& {
            return q;
        });
    // eps(l): identical inner expectation, contexts follow the teacher.
    const McEstimate oracle = rollout_accumulated_kl(
        teacher, student, prompts, horizon, mc_samples, seed, "mc_oracle",
        [](const std::vector<double>& p, const std::vector<double>&) -> const std::vector<double>& {
            return p;
        });

    ExposureReport rep;
    rep.horizon = horizon;
    rep.mc_samples = mc_samples;
    rep.r_l = r.mean;
    rep.r_se = r.se;
    rep.eps_l = oracle.mean / horizon;
    rep.eps_se = oracle.se / horizon;
    const double denom = oracle.mean;  // l * eps(l)
    if (std::abs(rep.r_l) < 1e-9 && std::abs(denom) < 1e-9) {
        rep.exaccerr_percent = 0.0;  // identical-models guard
    } else if (std::abs(denom) < 1e-9) {
        throw std::domain_error("exposure_metrics: degenerate denominator (l*eps = 0, R != 0)");
    } else {
        rep.exaccerr_percent = (rep.r_l - denom) / denom * 100.0;
    }
    return rep;
}

}  // namespace kdlab
