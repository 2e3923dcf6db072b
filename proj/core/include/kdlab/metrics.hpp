#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdlab/data.hpp"
#include "kdlab/losses.hpp"
#include "kdlab/model.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

struct RougeScore {
    int64_t lcs = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Longest-common-subsequence overlap between candidate and reference token
// sequences. F1 is 0 when the LCS is empty.
RougeScore rouge_l(std::span<const int> candidate, std::span<const int> reference);

// 1 - softmax(logits)[target]: the teacher's non-target probability mass,
// used as a per-token difficulty score.
template <typename T>
double unc(std::span<const T> logits, int target) {
    if (logits.empty()) {
        throw std::invalid_argument("unc: empty logits");
    }
    if (target < 0 || target >= static_cast<int>(logits.size())) {
        throw std::invalid_argument("unc: target out of range");
    }
    double m = static_cast<double>(logits[0]);
    for (T v : logits) m = std::max(m, static_cast<double>(v));
    double denom = 0.0;
    for (T v : logits) denom += std::exp(static_cast<double>(v) - m);
    const double p = std::exp(static_cast<double>(logits[target]) - m) / denom;
    return 1.0 - p;
}

namespace detail {

template <typename T>
int argmax_row(const T* row, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j) {
        if (row[j] > row[best]) best = j;  // first index wins ties
    }
    return best;
}

// Exact KL(p_t || p_s) from two logit rows at tau = 1, double accumulation.
template <typename T>
double row_kl(const T* t_row, const T* s_row, int n) {
    std::vector<double> t(n), s(n);
    double tm = static_cast<double>(t_row[0]), sm = static_cast<double>(s_row[0]);
    for (int j = 0; j < n; ++j) {
        tm = std::max(tm, static_cast<double>(t_row[j]));
        sm = std::max(sm, static_cast<double>(s_row[j]));
    }
    double tz = 0.0, sz = 0.0;
    for (int j = 0; j < n; ++j) {
        t[j] = std::exp(static_cast<double>(t_row[j]) - tm);
        s[j] = std::exp(static_cast<double>(s_row[j]) - sm);
        tz += t[j];
        sz += s[j];
    }
    const double log_tz = std::log(tz), log_sz = std::log(sz);
    double kl = 0.0;
    for (int j = 0; j < n; ++j) {
        const double pt = t[j] / tz;
        if (pt <= 0.0) continue;
        const double lpt = static_cast<double>(t_row[j]) - tm - log_tz;
        const double lps = static_cast<double>(s_row[j]) - sm - log_sz;
        kl += pt * (lpt - lps);
    }
    return kl;
}

template <typename T>
double row_std(const T* row, int n) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += static_cast<double>(row[j]);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
        const double d = static_cast<double>(row[j]) - mean;
        var += d * d;
    }
    return std::sqrt(var / n);
}

}  // namespace detail

// Fraction of masked positions where teacher and student argmax coincide,
// macro-averaged over sequences (sequences with no masked positions are
// skipped; an entirely empty mask is an error).
template <typename T>
double top1_agreement(std::span<const Tensor<T>> teacher_logits,
                      std::span<const Tensor<T>> student_logits,
                      std::span<const SeqSupervision> sup) {
    if (teacher_logits.size() != student_logits.size() || teacher_logits.size() != sup.size()) {
        throw std::invalid_argument("top1_agreement: sequence counts disagree");
    }
    double total = 0.0;
    int64_t sentences = 0;
    for (size_t i = 0; i < sup.size(); ++i) {
        const Tensor<T>& tl = teacher_logits[i];
        const Tensor<T>& sl = student_logits[i];
        if (!tl.same_shape(sl)) {
            throw std::invalid_argument("top1_agreement: logits shapes disagree");
        }
        const int rows = tl.shape[0], n = tl.shape[1];
        int64_t masked = 0, matched = 0;
        for (int t = 0; t < rows; ++t) {
            if (!sup[i].mask[t]) continue;
            ++masked;
            const int a = detail::argmax_row(tl.data.data() + static_cast<size_t>(t) * n, n);
            const int b = detail::argmax_row(sl.data.data() + static_cast<size_t>(t) * n, n);
            matched += a == b;
        }
        if (masked > 0) {
            total += static_cast<double>(matched) / static_cast<double>(masked);
            ++sentences;
        }
    }
    if (sentences == 0) {
        throw std::invalid_argument("top1_agreement: mask selects no positions");
    }
    return total / static_cast<double>(sentences);
}

struct BucketSpec {
    // Interior quantile cut points over the per-token UNC ranking; defaults to
    // terciles (easy / medium / hard).
    std::vector<double> edges{1.0 / 3.0, 2.0 / 3.0};

    int num_buckets() const { return static_cast<int>(edges.size()) + 1; }

    void validate() const {
        double prev = 0.0;
        for (double e : edges) {
            if (!(e > prev && e < 1.0)) {
                throw std::invalid_argument("BucketSpec: edges must be strictly increasing in (0, 1)");
            }
            prev = e;
        }
    }
};

struct BucketStats {
    int64_t count = 0;
    double mean_kl = 0.0;
    double mean_logit_std = 0.0;
    double top1_agreement = 0.0;
};

struct BucketedReport {
    std::vector<BucketStats> buckets;  // ordered easy -> hard
    int64_t total_tokens = 0;
};

// Ranks every masked token by teacher UNC and splits the ranking at the
// quantile edges; reports per-bucket mean KL(teacher || student), mean student
// logit standard deviation, and top-1 agreement.
template <typename T>
BucketedReport bucketed_analysis(std::span<const Tensor<T>> teacher_logits,
                                 std::span<const Tensor<T>> student_logits,
                                 std::span<const SeqSupervision> sup, const BucketSpec& spec) {
    spec.validate();
    if (teacher_logits.size() != student_logits.size() || teacher_logits.size() != sup.size()) {
        throw std::invalid_argument("bucketed_analysis: sequence counts disagree");
    }
    struct TokenRow {
        double unc;
        double kl;
        double sstd;
        bool match;
    };
    std::vector<TokenRow> rows;
    for (size_t i = 0; i < sup.size(); ++i) {
        const Tensor<T>& tl = teacher_logits[i];
        const Tensor<T>& sl = student_logits[i];
        const int n = tl.shape[1];
        for (int t = 0; t < tl.shape[0]; ++t) {
            if (!sup[i].mask[t]) continue;
            const T* trow = tl.data.data() + static_cast<size_t>(t) * n;
            const T* srow = sl.data.data() + static_cast<size_t>(t) * n;
            TokenRow r;
            r.unc = unc(std::span<const T>(trow, n), sup[i].targets[t]);
            r.kl = detail::row_kl(trow, srow, n);
            r.sstd = detail::row_std(srow, n);
            r.match = detail::argmax_row(trow, n) == detail::argmax_row(srow, n);
            rows.push_back(r);
        }
    }
    const int64_t total = static_cast<int64_t>(rows.size());
    const int nb = spec.num_buckets();
    if (total < nb) {
        throw std::invalid_argument("bucketed_analysis: fewer tokens than buckets");
    }
    std::vector<int64_t> order(total);
    for (int64_t i = 0; i < total; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return rows[a].unc < rows[b].unc; });

    BucketedReport report;
    report.total_tokens = total;
    int64_t start = 0;
    for (int b = 0; b < nb; ++b) {
        const int64_t end =
            b + 1 < nb ? static_cast<int64_t>(std::floor(spec.edges[b] * static_cast<double>(total)))
                       : total;
        BucketStats bs;
        bs.count = end - start;
        for (int64_t r = start; r < end; ++r) {
            const TokenRow& row = rows[order[r]];
            bs.mean_kl += row.kl;
            bs.mean_logit_std += row.sstd;
            bs.top1_agreement += row.match ? 1.0 : 0.0;
        }
        if (bs.count > 0) {
            bs.mean_kl /= static_cast<double>(bs.count);
            bs.mean_logit_std /= static_cast<double>(bs.count);
            bs.top1_agreement /= static_cast<double>(bs.count);
        }
        report.buckets.push_back(bs);
        start = end;
    }
    return report;
}

// Next-token distribution interface shared by the transformer wrapper and the
// hand-set test models used to validate the exposure estimators.
class SequenceDistribution {
public:
    virtual ~SequenceDistribution() = default;
    virtual int vocab_size() const = 0;
    virtual std::vector<double> next_probs(std::span<const int> context) = 0;
};

template <typename T>
class LmDistribution : public SequenceDistribution {
public:
    explicit LmDistribution(FrozenForward<T>& fwd) : fwd_(fwd) {}

    int vocab_size() const override { return fwd_.config().vocab_size; }

    std::vector<double> next_probs(std::span<const int> context) override {
        std::vector<int> ctx(context.begin(), context.end());
        const int cap = fwd_.config().max_seq_len;
        if (static_cast<int>(ctx.size()) > cap) {
            ctx.erase(ctx.begin(), ctx.end() - cap);
        }
        Tensor<T> logits = fwd_.logits(ctx);
        const int n = logits.shape[1];
        const int last = logits.shape[0] - 1;
        std::vector<double> row(n);
        double m = static_cast<double>(logits.at(last, 0));
        for (int j = 0; j < n; ++j) m = std::max(m, static_cast<double>(logits.at(last, j)));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            row[j] = std::exp(static_cast<double>(logits.at(last, j)) - m);
            z += row[j];
        }
        for (double& v : row) v /= z;
        return row;
    }

private:
    FrozenForward<T>& fwd_;
};

struct ExposureReport {
    double r_l = 0.0;              // accumulated free-run regret over the horizon
    double eps_l = 0.0;            // mean per-step error under teacher contexts
    double exaccerr_percent = 0.0;
    double r_se = 0.0;             // MC standard error of r_l
    double eps_se = 0.0;           // MC standard error of eps_l
    int horizon = 0;
    int mc_samples = 0;
};

// Monte-Carlo estimate of R(l) (contexts rolled out from the student) and
// eps(l) (contexts rolled out from the teacher); the per-step inner
// expectation is computed exactly as KL(teacher || student) at each context.
// ExAccErr = (R - l*eps) / (l*eps) * 100, with a guard returning 0 when both
// terms vanish.
ExposureReport exposure_metrics(SequenceDistribution& teacher, SequenceDistribution& student,
                                std::span<const std::vector<int>> prompts, int horizon,
                                int mc_samples, uint64_t seed);

struct MetricReport {
    double rouge_l_f1 = 0.0;
    double rouge_l_precision = 0.0;
    double rouge_l_recall = 0.0;
    int64_t rouge_pairs = 0;

    double top1_agreement = 0.0;
    int64_t ta_sequences = 0;
    double heldout_fkl = 0.0;  // masked-mean forward KL against the teacher
    double mean_teacher_unc = 0.0;

    double exaccerr_percent = 0.0;
    double r_l = 0.0;
    double eps_l = 0.0;
    int horizon = 0;
    int mc_samples = 0;

    std::vector<BucketStats> buckets;  // easy -> hard
    int64_t bucketed_tokens = 0;
};

// Deliberately excludes wall-clock so identical runs serialize byte-identically.
std::string metric_report_to_json(const MetricReport& report);
MetricReport metric_report_from_json(const std::string& json_text);
void write_bucket_csv(const std::string& path, const MetricReport& report);

}  // namespace kdlab
