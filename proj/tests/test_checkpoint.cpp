#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "kdlab/checkpoint.hpp"
#include "kdlab/rng.hpp"

using namespace kdlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& stem) {
    return fs::temp_directory_path() / ("kdlab_ckpt_test_" + stem + ".kdcp");
}

ModelConfig small_cfg(uint64_t seed) { return ModelConfig{19, 8, 2, 2, 12, seed}; }

template <typename T>
bool params_equal(const std::map<std::string, Tensor<T>>& a,
                  const std::map<std::string, Tensor<T>>& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        auto it = b.find(name);
        if (it == b.end() || t.shape != it->second.shape || t.data != it->second.data) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("model checkpoints round-trip bit-exactly in both dtypes") {
    const fs::path pf = temp_path("model_f32");
    ModelF mf = init_model<float>(small_cfg(41));
    save_model(pf.string(), mf);
    ModelF backf = load_model<float>(pf.string());
    CHECK(backf.config.vocab_size == mf.config.vocab_size);
    CHECK(backf.config.d_model == mf.config.d_model);
    CHECK(backf.config.n_layers == mf.config.n_layers);
    CHECK(backf.config.n_heads == mf.config.n_heads);
    CHECK(backf.config.max_seq_len == mf.config.max_seq_len);
    CHECK(backf.config.seed == mf.config.seed);
    CHECK(params_equal(backf.params, mf.params));

    std::vector<int> row{1, 5, 9, 2};
    CHECK(forward_logits_nograd(backf, row).data == forward_logits_nograd(mf, row).data);
    fs::remove(pf);

    const fs::path pd = temp_path("model_f64");
    ModelD md = init_model<double>(small_cfg(42));
    save_model(pd.string(), md);
    ModelD backd = load_model<double>(pd.string());
    CHECK(params_equal(backd.params, md.params));
    fs::remove(pd);
}

TEST_CASE("adapter checkpoints preserve configuration and weights") {
    ModelF m = init_model<float>(small_cfg(7));
    LoraConfig lc;
    lc.rank = 3;
    lc.scale = 1.5;
    lc.seed = 99;
    LoraF a = attach_lora(m, lc);
    // Give the up matrices some signal so the round trip is non-trivial.
    Rng rng(4);
    for (auto& [name, t] : a.params) {
        if (name.find("lora_up") != std::string::npos) {
            for (float& v : t.data) v = static_cast<float>(rng.normal(0.0, 0.05));
        }
    }

    const fs::path p = temp_path("adapter");
    save_adapter(p.string(), a);
    LoraF back = load_adapter<float>(p.string());
    CHECK(back.rank == 3);
    CHECK(back.config.rank == 3);
    CHECK(back.config.scale == 1.5);
    CHECK(back.config.seed == 99);
    CHECK_FALSE(back.consumed);
    CHECK(params_equal(back.params, a.params));

    std::vector<int> row{2, 4, 6};
    CHECK(forward_logits_nograd(m, back, row).data == forward_logits_nograd(m, a, row).data);
    fs::remove(p);
}

TEST_CASE("loading rejects wrong kinds, dtypes, magic, and missing files") {
    const fs::path p = temp_path("guards");
    ModelF m = init_model<float>(small_cfg(1));
    save_model(p.string(), m);

    // A model file is not an adapter.
    CHECK_THROWS_WITH_AS(load_adapter<float>(p.string()),
                         doctest::Contains("expected 'adapter'"), std::runtime_error);
    // Saved as f32, requested as f64.
    CHECK_THROWS_WITH_AS(load_model<double>(p.string()), doctest::Contains("dtype mismatch"),
                         std::runtime_error);
    fs::remove(p);

    const fs::path junk = temp_path("junk");
    {
        std::ofstream out(junk, std::ios::binary);
        out << "this is not a checkpoint at all";
    }
    CHECK_THROWS_WITH_AS(load_model<float>(junk.string()), doctest::Contains("bad magic"),
                         std::runtime_error);
    fs::remove(junk);

    CHECK_THROWS_AS(load_model<float>("/nonexistent/kdlab/missing.kdcp"), std::runtime_error);
}

TEST_CASE("truncated tensor data fails loudly") {
    const fs::path p = temp_path("trunc");
    ModelF m = init_model<float>(small_cfg(2));
    save_model(p.string(), m);
    const auto full = fs::file_size(p);
    fs::resize_file(p, full - 64);  // chop into the final tensor payload
    CHECK_THROWS_AS(load_model<float>(p.string()), std::runtime_error);
    fs::remove(p);
}

TEST_CASE("a merged adapter can no longer be saved") {
    ModelF m = init_model<float>(small_cfg(3));
    LoraConfig lc;
    lc.rank = 2;
    LoraF a = attach_lora(m, lc);
    ModelF merged = merge_adapters(m, a);
    (void)merged;
    const fs::path p = temp_path("consumed");
    CHECK_THROWS_AS(save_adapter(p.string(), a), std::logic_error);
    CHECK_FALSE(fs::exists(p));
}
