// Per-step wall-clock comparison across training regimes at equal model
// sizes — the desk-scale analogue of reporting relative training time per
// method. Expected ordering: standard < okd < on-policy (sampling cost).

#include <benchmark/benchmark.h>

#include "kdlab/experiment.hpp"
#include "kdlab/train.hpp"

namespace {

using namespace kdlab;

struct Fixture {
    ModelF teacher;
    ModelF student;
    std::vector<InstructionRecord> records;

    Fixture()
        : teacher(init_model<float>({259, 64, 2, 2, 64, 11})),
          student(init_model<float>({259, 32, 2, 2, 64, 12})),
          records(synthetic_corpus(64, 5)) {}
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

TrainConfig step_config(TrainMethod method, int steps) {
    TrainConfig cfg;
    cfg.method = method;
    cfg.steps = steps;
    cfg.batch_size = 4;
    cfg.seed = 3;
    cfg.learning_rate = 1e-3;
    if (method == TrainMethod::on_policy_kd) {
        cfg.sgo_fraction = 1.0;
        cfg.sgo_max_new_tokens = 32;
    }
    return cfg;
}

void run_steps(benchmark::State& state, TrainMethod method) {
    Fixture& f = fixture();
    for (auto _ : state) {
        TrainResult<float> r = train<float>(&f.teacher, f.student, f.records,
                                            step_config(method, static_cast<int>(state.range(0))));
        benchmark::DoNotOptimize(r.log.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_standard_kd(benchmark::State& state) { run_steps(state, TrainMethod::standard_kd); }
void BM_on_policy_kd(benchmark::State& state) { run_steps(state, TrainMethod::on_policy_kd); }
void BM_okd(benchmark::State& state) { run_steps(state, TrainMethod::okd); }

BENCHMARK(BM_standard_kd)->Arg(10)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_on_policy_kd)->Arg(10)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_okd)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
