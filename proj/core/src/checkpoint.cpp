#include "kdlab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <type_traits>

#include "json.hpp"

namespace kdlab {

namespace {

constexpr char kMagic[8] = {'K', 'D', 'C', 'P', 'v', '0', '0', '1'};

template <typename T>
const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) {
        return "f32";
    } else {
        static_assert(std::is_same_v<T, double>, "unsupported checkpoint dtype");
        return "f64";
    }
}

void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

template <typename T>
void write_tensors(std::ofstream& out, const std::map<std::string, Tensor<T>>& tensors) {
    for (const auto& [name, t] : tensors) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    }
}

template <typename T>
std::map<std::string, Tensor<T>> read_tensors(std::ifstream& in, uint32_t count,
                                              const std::string& path) {
    std::map<std::string, Tensor<T>> tensors;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t ndim = read_u32(in);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_u32(in));
        Tensor<T> t = Tensor<T>::zeros(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(T)));
        if (!in) {
            throw std::runtime_error("checkpoint: truncated tensor data in " + path);
        }
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

nlohmann::json read_header(std::ifstream& in, const std::string& path, const char* expect_kind,
                           const char* expect_dtype) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const uint32_t meta_len = read_u32(in);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), meta_len);
    nlohmann::json j = nlohmann::json::parse(meta, nullptr, false);
    if (j.is_discarded()) {
        throw std::runtime_error("checkpoint: bad metadata in " + path);
    }
    if (j.value("kind", std::string{}) != expect_kind) {
        throw std::runtime_error("checkpoint: " + path + " holds a '" +
                                 j.value("kind", std::string{"?"}) + "', expected '" +
                                 expect_kind + "'");
    }
    if (j.value("dtype", std::string{}) != expect_dtype) {
        throw std::runtime_error("checkpoint: dtype mismatch in " + path + " (file " +
                                 j.value("dtype", std::string{"?"}) + ", requested " +
                                 expect_dtype + ")");
    }
    return j;
}

void write_container(const std::string& path, const nlohmann::json& meta,
                     const std::function<void(std::ofstream&)>& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    }
    out.write(kMagic, sizeof(kMagic));
    const std::string meta_str = meta.dump();
    write_u32(out, static_cast<uint32_t>(meta_str.size()));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    body(out);
    if (!out) {
        throw std::runtime_error("checkpoint: write failed for " + path);
    }
}

}  // namespace

template <typename T>
void save_model(const std::string& path, const TransformerLM<T>& model) {
    nlohmann::json meta{{"kind", "model"},
                        {"dtype", dtype_name<T>()},
                        {"tensor_count", model.params.size()},
                        {"config",
                         {{"vocab_size", model.config.vocab_size},
                          {"d_model", model.config.d_model},
                          {"n_layers", model.config.n_layers},
                          {"n_heads", model.config.n_heads},
                          {"max_seq_len", model.config.max_seq_len},
                          {"seed", model.config.seed}}}};
    write_container(path, meta, [&](std::ofstream& out) { write_tensors(out, model.params); });
}

template <typename T>
TransformerLM<T> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + path);
    }
    nlohmann::json meta = read_header(in, path, "model", dtype_name<T>());
    TransformerLM<T> m;
    const auto& c = meta.at("config");
    m.config.vocab_size = c.at("vocab_size").get<int>();
    m.config.d_model = c.at("d_model").get<int>();
    m.config.n_layers = c.at("n_layers").get<int>();
    m.config.n_heads = c.at("n_heads").get<int>();
    m.config.max_seq_len = c.at("max_seq_len").get<int>();
    m.config.seed = c.at("seed").get<uint64_t>();
    m.params = read_tensors<T>(in, meta.at("tensor_count").get<uint32_t>(), path);
    return m;
}

template <typename T>
void save_adapter(const std::string& path, const LoraAdapter<T>& adapter) {
    adapter.check_usable("save_adapter");
    nlohmann::json meta{{"kind", "adapter"},
                        {"dtype", dtype_name<T>()},
                        {"tensor_count", adapter.params.size()},
                        {"config",
                         {{"rank", adapter.rank},
                          {"scale", adapter.config.scale},
                          {"seed", adapter.config.seed}}}};
    write_container(path, meta, [&](std::ofstream& out) { write_tensors(out, adapter.params); });
}

template <typename T>
LoraAdapter<T> load_adapter(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + path);
    }
    nlohmann::json meta = read_header(in, path, "adapter", dtype_name<T>());
    LoraAdapter<T> a;
    const auto& c = meta.at("config");
    a.rank = c.at("rank").get<int>();
    a.config.rank = a.rank;
    a.config.scale = c.at("scale").get<double>();
    a.config.seed = c.at("seed").get<uint64_t>();
    a.params = read_tensors<T>(in, meta.at("tensor_count").get<uint32_t>(), path);
    return a;
}

template void save_model<float>(const std::string&, const TransformerLM<float>&);
template void save_model<double>(const std::string&, const TransformerLM<double>&);
template TransformerLM<float> load_model<float>(const std::string&);
template TransformerLM<double> load_model<double>(const std::string&);
template void save_adapter<float>(const std::string&, const LoraAdapter<float>&);
template void save_adapter<double>(const std::string&, const LoraAdapter<double>&);
template LoraAdapter<float> load_adapter<float>(const std::string&);
template LoraAdapter<double> load_adapter<double>(const std::string&);

}  // namespace kdlab
