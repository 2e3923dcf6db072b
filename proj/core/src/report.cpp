#include <fstream>

#include "json.hpp"

#include "kdlab/metrics.hpp"
#include "kdlab/train.hpp"

namespace kdlab {

namespace {

nlohmann::json bucket_to_json(const BucketStats& b) {
    return {{"count", b.count},
            {"mean_kl", b.mean_kl},
            {"mean_logit_std", b.mean_logit_std},
            {"top1_agreement", b.top1_agreement}};
}

BucketStats bucket_from_json(const nlohmann::json& j) {
    BucketStats b;
    b.count = j.at("count").get<int64_t>();
    b.mean_kl = j.at("mean_kl").get<double>();
    b.mean_logit_std = j.at("mean_logit_std").get<double>();
    b.top1_agreement = j.at("top1_agreement").get<double>();
    return b;
}

}  // namespace

std::string metric_report_to_json(const MetricReport& r) {
    nlohmann::json j{
        {"rouge_l", {{"f1", r.rouge_l_f1}, {"precision", r.rouge_l_precision},
                      {"recall", r.rouge_l_recall}, {"pairs", r.rouge_pairs}}},
        {"top1_agreement", r.top1_agreement},
        {"ta_sequences", r.ta_sequences},
        {"heldout_fkl", r.heldout_fkl},
        {"mean_teacher_unc", r.mean_teacher_unc},
        {"exposure", {{"exaccerr_percent", r.exaccerr_percent}, {"r_l", r.r_l},
                       {"eps_l", r.eps_l}, {"horizon", r.horizon},
                       {"mc_samples", r.mc_samples}}},
        {"bucketed_tokens", r.bucketed_tokens},
    };
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : r.buckets) buckets.push_back(bucket_to_json(b));
    j["buckets"] = std::move(buckets);
    return j.dump(2) + "\n";
}

MetricReport metric_report_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    MetricReport r;
    const auto& rouge = j.at("rouge_l");
    r.rouge_l_f1 = rouge.at("f1").get<double>();
    r.rouge_l_precision = rouge.at("precision").get<double>();
    r.rouge_l_recall = rouge.at("recall").get<double>();
    r.rouge_pairs = rouge.at("pairs").get<int64_t>();
    r.top1_agreement = j.at("top1_agreement").get<double>();
    r.ta_sequences = j.at("ta_sequences").get<int64_t>();
    r.heldout_fkl = j.at("heldout_fkl").get<double>();
    r.mean_teacher_unc = j.at("mean_teacher_unc").get<double>();
    const auto& e = j.at("exposure");
    r.exaccerr_percent = e.at("exaccerr_percent").get<double>();
    r.r_l = e.at("r_l").get<double>();
    r.eps_l = e.at("eps_l").get<double>();
    r.horizon = e.at("horizon").get<int>();
    r.mc_samples = e.at("mc_samples").get<int>();
    r.bucketed_tokens = j.at("bucketed_tokens").get<int64_t>();
    for (const auto& b : j.at("buckets")) r.buckets.push_back(bucket_from_json(b));
    return r;
}

void write_bucket_csv(const std::string& path, const MetricReport& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("write_bucket_csv: cannot open " + path);
    }
    out << "bucket,metric,value\n";
    for (size_t i = 0; i < r.buckets.size(); ++i) {
        const auto& b = r.buckets[i];
        out << i << ",count," << b.count << "\n";
        out << i << ",mean_kl," << b.mean_kl << "\n";
        out << i << ",mean_logit_std," << b.mean_logit_std << "\n";
        out << i << ",top1_agreement," << b.top1_agreement << "\n";
    }
}

void write_step_log(const std::string& path, std::span<const StepRecord> log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("write_step_log: cannot open " + path);
    }
    out << "step,method,loss,kl_term,mle_term,lr,grad_norm,sgo_rows,wall_ms\n";
    for (const auto& s : log) {
        out << s.step << ',' << s.method << ',' << s.loss << ',' << s.kl_term << ','
            << s.mle_term << ',' << s.lr << ',' << s.grad_norm << ',' << s.sgo_rows << ','
            << s.wall_ms << "\n";
    }
}

}  // namespace kdlab
