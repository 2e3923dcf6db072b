// Command-line front end: config-driven training runs, standalone evaluation,
// difficulty-bucket analysis, cross-run comparison, and per-token case dumps.
// Every subcommand exits 0 only when it fully succeeded.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "kdlab/checkpoint.hpp"
#include "kdlab/experiment.hpp"
#include "kdlab/version.hpp"

namespace {

using namespace kdlab;

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out << text;
}

// Test records for eval-style subcommands, resolved from the config's data
// section so a run and its later re-evaluations agree on the split.
std::vector<InstructionRecord> test_split_for(const ExperimentConfig& cfg) {
    std::vector<InstructionRecord> records =
        cfg.data.path.empty() ? synthetic_corpus(cfg.data.synthetic_n, cfg.data.synthetic_seed)
                              : load_records_jsonl(cfg.data.path);
    return split_records(std::move(records), cfg.data.split).test;
}

int cmd_train(const std::string& config_path, const std::string& out_root) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    RunManifest manifest = run_experiment(cfg, out_root);
    std::cout << "run '" << manifest.name << "' complete: " << manifest.seeds.size()
              << " seed(s), method " << manifest.method << "\n"
              << "  config hash   " << manifest.config_hash << "\n"
              << "  mean rouge-l  " << manifest.mean_report.rouge_l_f1 << "\n"
              << "  mean ta       " << manifest.mean_report.top1_agreement << "\n"
              << "  heldout fkl   " << manifest.mean_report.heldout_fkl << "\n"
              << "  exaccerr%     " << manifest.mean_report.exaccerr_percent << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& teacher_path,
             const std::string& student_path, const std::string& adapter_path,
             const std::string& out_path) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    ModelF teacher = load_model<float>(teacher_path);
    ModelF student = load_model<float>(student_path);
    if (!adapter_path.empty()) {
        // Evaluating against the adapted teacher: merge the online module in.
        LoraAdapter<float> adapter = load_adapter<float>(adapter_path);
        teacher = merge_adapters(teacher, adapter);
    }
    auto test = test_split_for(cfg);
    MetricReport report = evaluate_student(teacher, student, test, cfg.metrics);
    write_or_print(out_path, metric_report_to_json(report));
    return 0;
}

int cmd_analyze(const std::string& config_path, const std::string& teacher_path,
                const std::string& student_path, const std::string& out_path) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    ModelF teacher = load_model<float>(teacher_path);
    ModelF student = load_model<float>(student_path);
    auto test = test_split_for(cfg);
    MetricReport report = evaluate_student(teacher, student, test, cfg.metrics);
    std::ostringstream table;
    table << "bucket,count,mean_kl,mean_logit_std,top1_agreement\n";
    for (size_t b = 0; b < report.buckets.size(); ++b) {
        const auto& s = report.buckets[b];
        table << b << ',' << s.count << ',' << s.mean_kl << ',' << s.mean_logit_std << ','
              << s.top1_agreement << "\n";
    }
    write_or_print(out_path, table.str());
    return 0;
}

int cmd_compare(const std::vector<std::string>& manifest_paths, const std::string& csv_path) {
    std::vector<RunManifest> manifests;
    manifests.reserve(manifest_paths.size());
    for (const auto& p : manifest_paths) manifests.push_back(load_manifest(p));
    std::string csv;
    std::string table = compare_manifests(manifests, &csv);
    std::cout << table;
    if (!csv_path.empty()) write_or_print(csv_path, csv);
    return 0;
}

int cmd_dump_cases(const std::string& config_path, const std::string& teacher_path,
                   const std::string& student_path, int k, int records_cap,
                   const std::string& out_path) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    ModelF teacher = load_model<float>(teacher_path);
    ModelF student = load_model<float>(student_path);
    auto test = test_split_for(cfg);
    if (records_cap > 0 && static_cast<size_t>(records_cap) < test.size()) {
        test.resize(static_cast<size_t>(records_cap));
    }
    const int max_len = std::min(teacher.config.max_seq_len, student.config.max_seq_len);
    write_or_print(out_path, dump_token_cases(teacher, student, test, k, max_len));
    return 0;
}

int cmd_print_config(const std::string& config_path) {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
        cfg = load_experiment_config(config_path);
        cfg.validate();
    }
    std::cout << experiment_config_to_json(cfg);
    std::cerr << "config_hash: " << config_hash(cfg) << "\n";
    return 0;
}

int cmd_gen_data(int64_t n, uint64_t seed, const std::string& out_path) {
    save_records_jsonl(out_path, synthetic_corpus(n, seed));
    std::cout << "wrote " << n << " records to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kdlab — desk-scale knowledge-distillation laboratory"};
    app.set_version_flag("--version", std::string(kdlab::kVersion));
    app.require_subcommand(1);

    std::string config_path, out_root, teacher_path, student_path, adapter_path, out_path;
    std::vector<std::string> manifest_paths;
    std::string csv_path;
    int top_k = 5;
    int records_cap = 8;
    int64_t gen_n = 2000;
    uint64_t gen_seed = 7;

    auto* train = app.add_subcommand("train", "Run the configured experiment end to end");
    train->add_option("--config", config_path, "experiment config (JSON)")->required();
    train->add_option("--out", out_root, "output root (overrides config and $KDLAB_OUT_ROOT)");

    auto* eval = app.add_subcommand("eval", "Evaluate a student checkpoint on the test split");
    eval->add_option("--config", config_path, "experiment config (JSON)")->required();
    eval->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    eval->add_option("--student", student_path, "student checkpoint")->required();
    eval->add_option("--adapter", adapter_path, "online-module checkpoint to merge into the teacher");
    eval->add_option("--out", out_path, "report path (stdout when omitted)");

    auto* analyze = app.add_subcommand("analyze", "Difficulty-bucketed teacher/student analysis");
    analyze->add_option("--config", config_path, "experiment config (JSON)")->required();
    analyze->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    analyze->add_option("--student", student_path, "student checkpoint")->required();
    analyze->add_option("--out", out_path, "bucket CSV path (stdout when omitted)");

    auto* compare = app.add_subcommand("compare", "Tabulate metrics across run manifests");
    compare->add_option("manifests", manifest_paths, "manifest.json paths")->required();
    compare->add_option("--csv", csv_path, "also write the table as CSV");

    auto* dump = app.add_subcommand("dump-cases", "Per-token top-k probability listing (CSV)");
    dump->add_option("--config", config_path, "experiment config (JSON)")->required();
    dump->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    dump->add_option("--student", student_path, "student checkpoint")->required();
    dump->add_option("--k", top_k, "teacher top-k per position")->check(CLI::PositiveNumber);
    dump->add_option("--records", records_cap, "cap on test records (0 = all)");
    dump->add_option("--out", out_path, "CSV path (stdout when omitted)");

    auto* print_cfg = app.add_subcommand("print-config",
                                         "Print the validated config (defaults when no file)");
    print_cfg->add_option("--config", config_path, "experiment config (JSON)");

    auto* gen = app.add_subcommand("gen-data", "Write a seeded synthetic instruction corpus");
    gen->add_option("--n", gen_n, "record count")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "grammar seed");
    gen->add_option("--out", out_path, "JSONL path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, out_root);
        if (eval->parsed()) return cmd_eval(config_path, teacher_path, student_path,
                                            adapter_path, out_path);
        if (analyze->parsed()) return cmd_analyze(config_path, teacher_path, student_path,
                                                  out_path);
        if (compare->parsed()) return cmd_compare(manifest_paths, csv_path);
        if (dump->parsed()) return cmd_dump_cases(config_path, teacher_path, student_path, top_k,
                                                  records_cap, out_path);
        if (print_cfg->parsed()) return cmd_print_config(config_path);
        if (gen->parsed()) return cmd_gen_data(gen_n, gen_seed, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
