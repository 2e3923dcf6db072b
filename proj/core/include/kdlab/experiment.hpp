#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kdlab/data.hpp"
#include "kdlab/metrics.hpp"
#include "kdlab/model.hpp"
#include "kdlab/train.hpp"

namespace kdlab {

struct DataConfig {
    std::string path;  // JSONL corpus; empty selects the synthetic grammar
    int64_t synthetic_n = 2000;
    uint64_t synthetic_seed = 7;
    SplitSpec split;
};

struct MetricConfig {
    int horizon = 32;  // free-run horizon; also the default decode budget
    int mc_samples = 200;
    BucketSpec buckets;
    int eval_records = 64;    // cap on test records per evaluation pass
    int decode_max_new = 32;  // greedy decode length for ROUGE
    uint64_t eval_seed = 9001;
};

struct TeacherSpec {
    ModelConfig model{259, 128, 4, 4, 96, 20240001};
    std::string checkpoint;   // when set, loaded instead of being trained
    int64_t sft_steps = 300;  // teacher preparation on the train split
    double sft_lr = 1e-3;
    int sft_batch = 8;
};

struct ExperimentConfig {
    std::string name = "run";
    TeacherSpec teacher;
    ModelConfig student{259, 64, 2, 2, 96, 1};
    TrainConfig train;
    DataConfig data;
    MetricConfig metrics;
    std::vector<uint64_t> seeds{1};
    std::string output_dir = "runs";

    // Throws with a message listing every violation at once.
    void validate() const;
};

std::string experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// FNV-1a over the canonical (sorted-key, whitespace-free) config JSON.
std::string config_hash(const ExperimentConfig& cfg);

struct SeedArtifacts {
    uint64_t seed = 0;
    std::string checkpoint_path;
    std::string adapter_path;  // empty unless the method trains one
    std::string report_path;
    std::string step_log_path;
    std::string bucket_csv_path;
    MetricReport report;
    double train_wall_ms = 0.0;
};

struct RunManifest {
    std::string name;
    std::string method;
    std::string config_hash;
    std::string code_version;
    std::string data_fingerprint;  // hash over the test-split token ids
    bool complete = false;
    std::vector<SeedArtifacts> seeds;
    MetricReport mean_report;
    double total_wall_ms = 0.0;
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& json_text);
RunManifest load_manifest(const std::string& path);

// Resolves the output root: explicit override, else $KDLAB_OUT_ROOT, else
// cfg.output_dir.
std::string resolve_output_root(const ExperimentConfig& cfg, const std::string& override_root);

// Full pipeline for every seed: prepare teacher, train per cfg.train.method,
// checkpoint, evaluate on the test split, write per-seed artifacts; the
// manifest is written incomplete up front and finalized last.
RunManifest run_experiment(const ExperimentConfig& cfg, const std::string& override_root = "");

// Evaluation used by run_experiment: greedy decode → ROUGE-L; teacher-forced
// pass → TA, held-out forward KL, UNC buckets; free-run pass → ExAccErr.
MetricReport evaluate_student(const ModelF& teacher, const ModelF& student,
                              std::span<const InstructionRecord> test, const MetricConfig& mc);

// Text table plus CSV of per-method means, seed std-devs, and relative
// wall-clock; requires all manifests to share the test-split fingerprint.
std::string compare_manifests(std::span<const RunManifest> manifests, std::string* csv_out);

// Per masked position: top-k teacher tokens with teacher/student
// probabilities, target id, and teacher UNC. Returns CSV text.
std::string dump_token_cases(const ModelF& teacher, const ModelF& student,
                             std::span<const InstructionRecord> records, int k, int max_len);

}  // namespace kdlab
