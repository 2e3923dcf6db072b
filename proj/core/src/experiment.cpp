#include "kdlab/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "kdlab/checkpoint.hpp"
#include "kdlab/rng.hpp"
#include "kdlab/version.hpp"

namespace fs = std::filesystem;

namespace kdlab {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) {
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
        }
    }
}

json model_config_to_json(const ModelConfig& m) {
    return {{"vocab_size", m.vocab_size}, {"d_model", m.d_model},   {"n_layers", m.n_layers},
            {"n_heads", m.n_heads},       {"max_seq_len", m.max_seq_len}, {"seed", m.seed}};
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& defaults,
                                   const std::string& where) {
    reject_unknown_keys(j, {"vocab_size", "d_model", "n_layers", "n_heads", "max_seq_len", "seed"},
                        where);
    ModelConfig m = defaults;
    m.vocab_size = j.value("vocab_size", m.vocab_size);
    m.d_model = j.value("d_model", m.d_model);
    m.n_layers = j.value("n_layers", m.n_layers);
    m.n_heads = j.value("n_heads", m.n_heads);
    m.max_seq_len = j.value("max_seq_len", m.max_seq_len);
    m.seed = j.value("seed", m.seed);
    return m;
}

json train_config_to_json(const TrainConfig& t) {
    return {{"method", to_string(t.method)},
            {"steps", t.steps},
            {"learning_rate", t.learning_rate},
            {"batch_size", t.batch_size},
            {"warmup_fraction", t.warmup_fraction},
            {"seed", t.seed},
            {"sgo_fraction", t.sgo_fraction},
            {"clip_norm", t.clip_norm},
            {"adapter_learning_rate", t.adapter_learning_rate},
            {"sgo_max_new_tokens", t.sgo_max_new_tokens},
            {"sgo_temperature", t.sgo_temperature},
            {"distill",
             {{"divergence", to_string(t.distill.divergence)},
              {"temperature", t.distill.temperature},
              {"alpha", t.distill.alpha},
              {"jsd_beta", t.distill.jsd_beta}}},
            {"lora", {{"rank", t.lora.rank}, {"scale", t.lora.scale}, {"seed", t.lora.seed}}}};
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"method", "steps", "learning_rate", "batch_size", "warmup_fraction",
                         "seed", "sgo_fraction", "clip_norm", "adapter_learning_rate",
                         "sgo_max_new_tokens", "sgo_temperature", "distill", "lora"},
                        "train");
    TrainConfig t;
    t.method = train_method_from_string(j.value("method", std::string{"standard_kd"}));
    t.steps = j.value("steps", t.steps);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.warmup_fraction = j.value("warmup_fraction", t.warmup_fraction);
    t.seed = j.value("seed", t.seed);
    t.sgo_fraction = j.value("sgo_fraction", t.sgo_fraction);
    t.clip_norm = j.value("clip_norm", t.clip_norm);
    t.adapter_learning_rate = j.value("adapter_learning_rate", t.adapter_learning_rate);
    t.sgo_max_new_tokens = j.value("sgo_max_new_tokens", t.sgo_max_new_tokens);
    t.sgo_temperature = j.value("sgo_temperature", t.sgo_temperature);
    if (j.contains("distill")) {
        const json& d = j.at("distill");
        reject_unknown_keys(d, {"divergence", "temperature", "alpha", "jsd_beta"},
                            "train.distill");
        t.distill.divergence =
            divergence_from_string(d.value("divergence", std::string{"forward_kl"}));
        t.distill.temperature = d.value("temperature", t.distill.temperature);
        t.distill.alpha = d.value("alpha", t.distill.alpha);
        t.distill.jsd_beta = d.value("jsd_beta", t.distill.jsd_beta);
    }
    if (j.contains("lora")) {
        const json& l = j.at("lora");
        reject_unknown_keys(l, {"rank", "scale", "seed"}, "train.lora");
        t.lora.rank = l.value("rank", t.lora.rank);
        t.lora.scale = l.value("scale", t.lora.scale);
        t.lora.seed = l.value("seed", t.lora.seed);
    }
    return t;
}

json metric_report_to_json_obj(const MetricReport& r) {
    return json::parse(metric_report_to_json(r));
}

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string fingerprint_records(std::span<const InstructionRecord> records) {
    std::string buf;
    for (const auto& r : records) {
        buf += r.instruction;
        buf += '\x1f';
        buf += r.input;
        buf += '\x1f';
        buf += r.output;
        buf += '\x1e';
    }
    return hex64(fnv1a64(buf));
}

json artifacts_to_json(const SeedArtifacts& a) {
    return {{"seed", a.seed},
            {"checkpoint", a.checkpoint_path},
            {"adapter", a.adapter_path},
            {"report_path", a.report_path},
            {"step_log", a.step_log_path},
            {"bucket_csv", a.bucket_csv_path},
            {"train_wall_ms", a.train_wall_ms},
            {"report", metric_report_to_json_obj(a.report)}};
}

SeedArtifacts artifacts_from_json(const json& j) {
    SeedArtifacts a;
    a.seed = j.at("seed").get<uint64_t>();
    a.checkpoint_path = j.at("checkpoint").get<std::string>();
    a.adapter_path = j.at("adapter").get<std::string>();
    a.report_path = j.at("report_path").get<std::string>();
    a.step_log_path = j.at("step_log").get<std::string>();
    a.bucket_csv_path = j.at("bucket_csv").get<std::string>();
    a.train_wall_ms = j.at("train_wall_ms").get<double>();
    a.report = metric_report_from_json(j.at("report").dump());
    return a;
}

void save_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out << text;
}

MetricReport mean_reports(const std::vector<SeedArtifacts>& seeds) {
    MetricReport mean;
    if (seeds.empty()) return mean;
    const double n = static_cast<double>(seeds.size());
    mean.buckets.resize(seeds[0].report.buckets.size());
    for (const auto& s : seeds) {
        const MetricReport& r = s.report;
        mean.rouge_l_f1 += r.rouge_l_f1 / n;
        mean.rouge_l_precision += r.rouge_l_precision / n;
        mean.rouge_l_recall += r.rouge_l_recall / n;
        mean.rouge_pairs += r.rouge_pairs;
        mean.top1_agreement += r.top1_agreement / n;
        mean.ta_sequences += r.ta_sequences;
        mean.heldout_fkl += r.heldout_fkl / n;
        mean.mean_teacher_unc += r.mean_teacher_unc / n;
        mean.exaccerr_percent += r.exaccerr_percent / n;
        mean.r_l += r.r_l / n;
        mean.eps_l += r.eps_l / n;
        mean.bucketed_tokens += r.bucketed_tokens;
        for (size_t b = 0; b < mean.buckets.size() && b < r.buckets.size(); ++b) {
            mean.buckets[b].count += r.buckets[b].count;
            mean.buckets[b].mean_kl += r.buckets[b].mean_kl / n;
            mean.buckets[b].mean_logit_std += r.buckets[b].mean_logit_std / n;
            mean.buckets[b].top1_agreement += r.buckets[b].top1_agreement / n;
        }
    }
    mean.horizon = seeds[0].report.horizon;
    mean.mc_samples = seeds[0].report.mc_samples;
    return mean;
}

}  // namespace

void ExperimentConfig::validate() const {
    std::vector<std::string> problems;
    auto check = [&](const std::function<void()>& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            problems.emplace_back(e.what());
        }
    };
    if (name.empty()) problems.emplace_back("name must be nonempty");
    if (seeds.empty()) problems.emplace_back("seeds must be nonempty");
    check([&] { teacher.model.validate(); });
    check([&] { student.validate(); });
    check([&] { train.validate(); });
    if (teacher.model.vocab_size != student.vocab_size) {
        problems.emplace_back("teacher and student vocab_size must match");
    }
    if (!data.path.empty() && !fs::exists(data.path)) {
        problems.emplace_back("data.path does not exist: " + data.path);
    }
    if (data.path.empty() && data.synthetic_n < 10) {
        problems.emplace_back("data.synthetic_n must be >= 10");
    }
    if (!teacher.checkpoint.empty() && !fs::exists(teacher.checkpoint)) {
        problems.emplace_back("teacher.checkpoint does not exist: " + teacher.checkpoint);
    }
    if (teacher.checkpoint.empty() && teacher.sft_steps < 0) {
        problems.emplace_back("teacher.sft_steps must be non-negative");
    }
    if (metrics.horizon < 1) problems.emplace_back("metrics.horizon must be >= 1");
    if (metrics.mc_samples < 1) problems.emplace_back("metrics.mc_samples must be >= 1");
    if (metrics.eval_records < 1) problems.emplace_back("metrics.eval_records must be >= 1");
    if (metrics.decode_max_new < 1) problems.emplace_back("metrics.decode_max_new must be >= 1");
    check([&] { metrics.buckets.validate(); });
    if (output_dir.empty()) problems.emplace_back("output_dir must be nonempty");
    if (!problems.empty()) {
        std::string msg = "invalid config (" + std::to_string(problems.size()) + " problem(s)):";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw std::invalid_argument(msg);
    }
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
    json j{{"name", cfg.name},
           {"teacher",
            {{"model", model_config_to_json(cfg.teacher.model)},
             {"checkpoint", cfg.teacher.checkpoint},
             {"sft_steps", cfg.teacher.sft_steps},
             {"sft_lr", cfg.teacher.sft_lr},
             {"sft_batch", cfg.teacher.sft_batch}}},
           {"student", model_config_to_json(cfg.student)},
           {"train", train_config_to_json(cfg.train)},
           {"data",
            {{"path", cfg.data.path},
             {"synthetic_n", cfg.data.synthetic_n},
             {"synthetic_seed", cfg.data.synthetic_seed},
             {"split",
              {{"train_count", cfg.data.split.train_count},
               {"valid_count", cfg.data.split.valid_count},
               {"test_count", cfg.data.split.test_count},
               {"valid_fraction", cfg.data.split.valid_fraction},
               {"test_fraction", cfg.data.split.test_fraction},
               {"seed", cfg.data.split.seed}}}}},
           {"metrics",
            {{"horizon", cfg.metrics.horizon},
             {"mc_samples", cfg.metrics.mc_samples},
             {"bucket_edges", cfg.metrics.buckets.edges},
             {"eval_records", cfg.metrics.eval_records},
             {"decode_max_new", cfg.metrics.decode_max_new},
             {"eval_seed", cfg.metrics.eval_seed}}},
           {"seeds", cfg.seeds},
           {"output_dir", cfg.output_dir}};
    return j.dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    reject_unknown_keys(
        j, {"name", "teacher", "student", "train", "data", "metrics", "seeds", "output_dir"},
        "top level");
    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    if (j.contains("teacher")) {
        const json& t = j.at("teacher");
        reject_unknown_keys(t, {"model", "checkpoint", "sft_steps", "sft_lr", "sft_batch"},
                            "teacher");
        if (t.contains("model")) {
            cfg.teacher.model = model_config_from_json(t.at("model"), cfg.teacher.model,
                                                       "teacher.model");
        }
        cfg.teacher.checkpoint = t.value("checkpoint", cfg.teacher.checkpoint);
        cfg.teacher.sft_steps = t.value("sft_steps", cfg.teacher.sft_steps);
        cfg.teacher.sft_lr = t.value("sft_lr", cfg.teacher.sft_lr);
        cfg.teacher.sft_batch = t.value("sft_batch", cfg.teacher.sft_batch);
    }
    if (j.contains("student")) {
        cfg.student = model_config_from_json(j.at("student"), cfg.student, "student");
    }
    if (j.contains("train")) {
        cfg.train = train_config_from_json(j.at("train"));
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown_keys(d, {"path", "synthetic_n", "synthetic_seed", "split"}, "data");
        cfg.data.path = d.value("path", cfg.data.path);
        cfg.data.synthetic_n = d.value("synthetic_n", cfg.data.synthetic_n);
        cfg.data.synthetic_seed = d.value("synthetic_seed", cfg.data.synthetic_seed);
        if (d.contains("split")) {
            const json& s = d.at("split");
            reject_unknown_keys(s,
                                {"train_count", "valid_count", "test_count", "valid_fraction",
                                 "test_fraction", "seed"},
                                "data.split");
            cfg.data.split.train_count = s.value("train_count", cfg.data.split.train_count);
            cfg.data.split.valid_count = s.value("valid_count", cfg.data.split.valid_count);
            cfg.data.split.test_count = s.value("test_count", cfg.data.split.test_count);
            cfg.data.split.valid_fraction =
                s.value("valid_fraction", cfg.data.split.valid_fraction);
            cfg.data.split.test_fraction = s.value("test_fraction", cfg.data.split.test_fraction);
            cfg.data.split.seed = s.value("seed", cfg.data.split.seed);
        }
    }
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        reject_unknown_keys(
            m, {"horizon", "mc_samples", "bucket_edges", "eval_records", "decode_max_new",
                "eval_seed"},
            "metrics");
        cfg.metrics.horizon = m.value("horizon", cfg.metrics.horizon);
        cfg.metrics.mc_samples = m.value("mc_samples", cfg.metrics.mc_samples);
        if (m.contains("bucket_edges")) {
            cfg.metrics.buckets.edges = m.at("bucket_edges").get<std::vector<double>>();
        }
        cfg.metrics.eval_records = m.value("eval_records", cfg.metrics.eval_records);
        cfg.metrics.decode_max_new = m.value("decode_max_new", cfg.metrics.decode_max_new);
        cfg.metrics.eval_seed = m.value("eval_seed", cfg.metrics.eval_seed);
    }
    if (j.contains("seeds")) {
        cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    }
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return experiment_config_from_json(ss.str());
}

std::string config_hash(const ExperimentConfig& cfg) {
    // Canonical form: sorted keys, no whitespace — hash is insensitive to
    // formatting of the source file.
    const std::string canonical = json::parse(experiment_config_to_json(cfg)).dump();
    return hex64(fnv1a64(canonical));
}

std::string manifest_to_json(const RunManifest& m) {
    json j{{"name", m.name},
           {"method", m.method},
           {"config_hash", m.config_hash},
           {"code_version", m.code_version},
           {"data_fingerprint", m.data_fingerprint},
           {"complete", m.complete},
           {"total_wall_ms", m.total_wall_ms},
           {"mean_report", metric_report_to_json_obj(m.mean_report)}};
    json seeds = json::array();
    for (const auto& s : m.seeds) seeds.push_back(artifacts_to_json(s));
    j["seeds"] = std::move(seeds);
    return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    RunManifest m;
    m.name = j.at("name").get<std::string>();
    m.method = j.at("method").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.data_fingerprint = j.at("data_fingerprint").get<std::string>();
    m.complete = j.at("complete").get<bool>();
    m.total_wall_ms = j.at("total_wall_ms").get<double>();
    m.mean_report = metric_report_from_json(j.at("mean_report").dump());
    for (const auto& s : j.at("seeds")) m.seeds.push_back(artifacts_from_json(s));
    return m;
}

RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open manifest " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_json(ss.str());
}

std::string resolve_output_root(const ExperimentConfig& cfg, const std::string& override_root) {
    if (!override_root.empty()) return override_root;
    if (const char* env = std::getenv("KDLAB_OUT_ROOT"); env != nullptr && *env != '\0') {
        return env;
    }
    return cfg.output_dir;
}

MetricReport evaluate_student(const ModelF& teacher, const ModelF& student,
                              std::span<const InstructionRecord> test, const MetricConfig& mc) {
    if (test.empty()) {
        throw std::invalid_argument("evaluate_student: empty test split");
    }
    const int max_len = std::min(teacher.config.max_seq_len, student.config.max_seq_len);
    FrozenForward<float> teacher_fwd(teacher);
    FrozenForward<float> student_fwd(student);
    const size_t n = std::min(test.size(), static_cast<size_t>(mc.eval_records));

    MetricReport report;
    std::vector<Tensor<float>> t_logits, s_logits;
    std::vector<SeqSupervision> sup;
    std::vector<std::vector<int>> prompts;
    double unc_sum = 0.0;
    int64_t unc_count = 0;

    double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        auto ex = encode_example(test[i], max_len);
        if (!ex) continue;
        const auto& row = ex->tokens;
        Tensor<float> tl = teacher_fwd.logits(row);
        Tensor<float> sl = student_fwd.logits(row);
        const int len = static_cast<int>(row.size());
        SeqSupervision s;
        s.targets.assign(len, 0);
        s.mask.assign(len, 0);
        for (int t = 0; t + 1 < len; ++t) {
            s.targets[t] = row[t + 1];
            s.mask[t] = ex->mask[t + 1];
        }
        const int vocab = teacher.config.vocab_size;
        for (int t = 0; t + 1 < len; ++t) {
            if (!s.mask[t]) continue;
            unc_sum += unc(std::span<const float>(tl.data.data() + static_cast<size_t>(t) * vocab,
                                                  vocab),
                           s.targets[t]);
            ++unc_count;
        }
        t_logits.push_back(std::move(tl));
        s_logits.push_back(std::move(sl));
        sup.push_back(std::move(s));

        std::vector<int> prompt(row.begin(), row.begin() + ex->prompt_len);
        DecodeConfig dc;
        dc.max_new_tokens = mc.decode_max_new;
        dc.greedy = true;
        dc.eos_token = tokens::kEos;
        std::vector<int> gen = strip_special(student_fwd.generate(prompt, dc));
        std::vector<int> ref = tokenize(test[i].output);
        if (!gen.empty()) {
            RougeScore rs = rouge_l(gen, ref);
            p_sum += rs.precision;
            r_sum += rs.recall;
            f_sum += rs.f1;
        }
        ++report.rouge_pairs;
        prompts.push_back(std::move(prompt));
    }
    if (sup.empty()) {
        throw std::invalid_argument("evaluate_student: no usable test records");
    }
    report.rouge_l_precision = p_sum / static_cast<double>(report.rouge_pairs);
    report.rouge_l_recall = r_sum / static_cast<double>(report.rouge_pairs);
    report.rouge_l_f1 = f_sum / static_cast<double>(report.rouge_pairs);

    report.top1_agreement = top1_agreement<float>(t_logits, s_logits, sup);
    report.ta_sequences = static_cast<int64_t>(sup.size());
    report.mean_teacher_unc = unc_count > 0 ? unc_sum / static_cast<double>(unc_count) : 0.0;

    TokenDistributions<float> dists{t_logits, s_logits, sup};
    report.heldout_fkl = kd_kl_loss_value(dists, 1.0, KlDirection::forward);

    BucketedReport buckets = bucketed_analysis<float>(t_logits, s_logits, sup, mc.buckets);
    report.buckets = std::move(buckets.buckets);
    report.bucketed_tokens = buckets.total_tokens;

    LmDistribution<float> t_dist(teacher_fwd), s_dist(student_fwd);
    ExposureReport exposure =
        exposure_metrics(t_dist, s_dist, prompts, mc.horizon, mc.mc_samples, mc.eval_seed);
    report.exaccerr_percent = exposure.exaccerr_percent;
    report.r_l = exposure.r_l;
    report.eps_l = exposure.eps_l;
    report.horizon = exposure.horizon;
    report.mc_samples = exposure.mc_samples;
    return report;
}

namespace {

ModelF prepare_teacher(const ExperimentConfig& cfg, std::span<const InstructionRecord> train_set) {
    if (!cfg.teacher.checkpoint.empty()) {
        ModelF m = load_model<float>(cfg.teacher.checkpoint);
        if (m.config.vocab_size != cfg.student.vocab_size) {
            throw std::invalid_argument("teacher checkpoint vocabulary mismatch");
        }
        return m;
    }
    ModelF teacher = init_model<float>(cfg.teacher.model);
    if (cfg.teacher.sft_steps > 0) {
        TrainConfig sft;
        sft.method = TrainMethod::sft;
        sft.steps = cfg.teacher.sft_steps;
        sft.learning_rate = cfg.teacher.sft_lr;
        sft.batch_size = cfg.teacher.sft_batch;
        sft.seed = cfg.teacher.model.seed;
        teacher = train_sft(std::move(teacher), train_set, sft).student;
    }
    return teacher;
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& cfg, const std::string& override_root) {
    cfg.validate();
    const auto run_start = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(resolve_output_root(cfg, override_root)) / cfg.name;
    fs::create_directories(dir);

    std::vector<InstructionRecord> records =
        cfg.data.path.empty() ? synthetic_corpus(cfg.data.synthetic_n, cfg.data.synthetic_seed)
                              : load_records_jsonl(cfg.data.path);
    Corpus corpus = split_records(std::move(records), cfg.data.split);
    if (corpus.train.empty() || corpus.test.empty()) {
        throw std::invalid_argument("run_experiment: empty train or test split");
    }

    RunManifest manifest;
    manifest.name = cfg.name;
    manifest.method = to_string(cfg.train.method);
    manifest.config_hash = config_hash(cfg);
    manifest.code_version = kVersion;
    manifest.data_fingerprint = fingerprint_records(corpus.test);
    manifest.complete = false;
    const std::string manifest_path = (dir / "manifest.json").string();
    save_text(manifest_path, manifest_to_json(manifest));
    save_text((dir / "config.json").string(), experiment_config_to_json(cfg));

    ModelF teacher = prepare_teacher(cfg, corpus.train);
    save_model((dir / "teacher.kdcp").string(), teacher);

    for (uint64_t seed : cfg.seeds) {
        const fs::path seed_dir = dir / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);

        ModelConfig student_cfg = cfg.student;
        student_cfg.seed = seed;
        ModelF student = init_model<float>(student_cfg);
        TrainConfig train_cfg = cfg.train;
        train_cfg.seed = seed;

        const auto t0 = std::chrono::steady_clock::now();
        TrainResult<float> result =
            train<float>(&teacher, std::move(student), corpus.train, train_cfg);
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();

        SeedArtifacts art;
        art.seed = seed;
        art.train_wall_ms = wall_ms;
        art.checkpoint_path = (seed_dir / "student.kdcp").string();
        save_model(art.checkpoint_path, result.student);
        if (result.has_adapter) {
            art.adapter_path = (seed_dir / "adapter.kdcp").string();
            save_adapter(art.adapter_path, result.adapter);
        }
        art.step_log_path = (seed_dir / "steps.csv").string();
        write_step_log(art.step_log_path, result.log);

        art.report = evaluate_student(teacher, result.student, corpus.test, cfg.metrics);
        art.report_path = (seed_dir / "report.json").string();
        save_text(art.report_path, metric_report_to_json(art.report));
        art.bucket_csv_path = (seed_dir / "buckets.csv").string();
        write_bucket_csv(art.bucket_csv_path, art.report);

        manifest.seeds.push_back(std::move(art));
    }

    manifest.mean_report = mean_reports(manifest.seeds);
    manifest.total_wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - run_start)
            .count();
    manifest.complete = true;
    save_text(manifest_path, manifest_to_json(manifest));
    return manifest;
}

namespace {

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double sq = 0.0;
        for (double x : xs) sq += (x - m.mean) * (x - m.mean);
        m.stddev = std::sqrt(sq / static_cast<double>(xs.size() - 1));
    }
    return m;
}

}  // namespace

std::string compare_manifests(std::span<const RunManifest> manifests, std::string* csv_out) {
    if (manifests.empty()) {
        throw std::invalid_argument("compare_manifests: no manifests");
    }
    for (const auto& m : manifests) {
        if (m.data_fingerprint != manifests[0].data_fingerprint) {
            throw std::invalid_argument("compare_manifests: test splits differ (" + m.name +
                                        ")");
        }
    }
    struct Row {
        std::string method, name;
        size_t seeds;
        Moments rouge, ta, fkl, exa;
        double wall_ms_per_seed;
    };
    std::vector<Row> rows;
    for (const auto& m : manifests) {
        std::vector<double> rouge, ta, fkl, exa;
        for (const auto& s : m.seeds) {
            rouge.push_back(s.report.rouge_l_f1);
            ta.push_back(s.report.top1_agreement);
            fkl.push_back(s.report.heldout_fkl);
            exa.push_back(s.report.exaccerr_percent);
        }
        double wall = 0.0;
        for (const auto& s : m.seeds) wall += s.train_wall_ms;
        rows.push_back({m.method, m.name, m.seeds.size(), moments(rouge), moments(ta),
                        moments(fkl), moments(exa),
                        m.seeds.empty() ? 0.0 : wall / static_cast<double>(m.seeds.size())});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return a.method != b.method ? a.method < b.method : a.name < b.name;
    });
    double min_wall = rows[0].wall_ms_per_seed;
    for (const auto& r : rows) min_wall = std::min(min_wall, r.wall_ms_per_seed);
    if (min_wall <= 0.0) min_wall = 1.0;

    std::ostringstream text, csv;
    csv << "method,name,seeds,rouge_l_f1,rouge_l_f1_std,top1_agreement,top1_agreement_std,"
           "heldout_fkl,heldout_fkl_std,exaccerr_percent,wall_ms_per_seed,relative_wall\n";
    text << std::left << std::setw(14) << "method" << std::setw(18) << "name" << std::right
         << std::setw(6) << "seeds" << std::setw(16) << "rouge-l f1" << std::setw(16) << "ta"
         << std::setw(16) << "heldout fkl" << std::setw(12) << "exaccerr%" << std::setw(12)
         << "rel wall" << "\n";
    for (const auto& r : rows) {
        const double rel = r.wall_ms_per_seed / min_wall;
        csv << r.method << ',' << r.name << ',' << r.seeds << ',' << r.rouge.mean << ','
            << r.rouge.stddev << ',' << r.ta.mean << ',' << r.ta.stddev << ',' << r.fkl.mean
            << ',' << r.fkl.stddev << ',' << r.exa.mean << ',' << r.wall_ms_per_seed << ','
            << rel << "\n";
        std::ostringstream rouge_s, ta_s, fkl_s;
        rouge_s << std::fixed << std::setprecision(4) << r.rouge.mean << "±" << std::setprecision(3)
                << r.rouge.stddev;
        ta_s << std::fixed << std::setprecision(4) << r.ta.mean << "±" << std::setprecision(3)
             << r.ta.stddev;
        fkl_s << std::fixed << std::setprecision(4) << r.fkl.mean << "±" << std::setprecision(3)
              << r.fkl.stddev;
        text << std::left << std::setw(14) << r.method << std::setw(18) << r.name << std::right
             << std::setw(6) << r.seeds << std::setw(16) << rouge_s.str() << std::setw(16)
             << ta_s.str() << std::setw(16) << fkl_s.str() << std::setw(12) << std::fixed
             << std::setprecision(1) << r.exa.mean << std::setw(11) << std::setprecision(2) << rel
             << "x\n";
    }
    if (csv_out != nullptr) *csv_out = csv.str();
    return text.str();
}

std::string dump_token_cases(const ModelF& teacher, const ModelF& student,
                             std::span<const InstructionRecord> records, int k, int max_len) {
    if (k < 1) {
        throw std::invalid_argument("dump_token_cases: k must be >= 1");
    }
    FrozenForward<float> teacher_fwd(teacher);
    FrozenForward<float> student_fwd(student);
    std::ostringstream csv;
    csv << "record,position,target_id,target_unc,rank,token_id,teacher_prob,student_prob\n";
    csv << std::setprecision(9);
    const int vocab = teacher.config.vocab_size;
    for (size_t i = 0; i < records.size(); ++i) {
        auto ex = encode_example(records[i], max_len);
        if (!ex) continue;
        Tensor<float> tl = teacher_fwd.logits(ex->tokens);
        Tensor<float> sl = student_fwd.logits(ex->tokens);
        Tensor<float> tp = softmax_rows(tl, 1.0);
        Tensor<float> sp = softmax_rows(sl, 1.0);
        const int len = static_cast<int>(ex->tokens.size());
        for (int t = 0; t + 1 < len; ++t) {
            if (!ex->mask[t + 1]) continue;
            const int target = ex->tokens[t + 1];
            const float* trow = tp.data.data() + static_cast<size_t>(t) * vocab;
            const float* srow = sp.data.data() + static_cast<size_t>(t) * vocab;
            std::vector<int> order(vocab);
            for (int c = 0; c < vocab; ++c) order[c] = c;
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return trow[a] > trow[b]; });
            const int top = std::min(k, vocab);
            for (int r = 0; r < top; ++r) {
                csv << i << ',' << t << ',' << target << ',' << 1.0 - static_cast<double>(trow[target])
                    << ',' << r << ',' << order[r] << ',' << static_cast<double>(trow[order[r]])
                    << ',' << static_cast<double>(srow[order[r]]) << "\n";
            }
        }
    }
    return csv.str();
}

}  // namespace kdlab
