#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kdlab {

// Byte-level vocabulary: ids 0..255 are the raw byte values, reserved ids sit
// above them so that tokenize("ab") is literally {97, 98}.
namespace tokens {
inline constexpr int kPad = 256;
inline constexpr int kEos = 257;
inline constexpr int kBos = 258;
inline constexpr int kVocabSize = 259;
}  // namespace tokens

inline std::vector<int> tokenize(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

// Strict inverse: only byte ids are text. Strip reserved ids first (see
// strip_special) when decoding model output.
inline std::string detokenize(std::span<const int> ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id > 255) {
            throw std::invalid_argument("detokenize: id " + std::to_string(id) +
                                        " is not a byte token");
        }
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

inline std::vector<int> strip_special(std::span<const int> ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id <= 255) out.push_back(id);
    }
    return out;
}

struct InstructionRecord {
    std::string instruction;
    std::string input;  // may be empty
    std::string output;

    bool valid() const { return !instruction.empty() && !output.empty(); }
};

inline std::string render_prompt(const InstructionRecord& r) {
    std::string p = "\n\nInstruction:\n" + r.instruction;
    if (!r.input.empty()) {
        p += "\n\nInput:\n" + r.input;
    }
    p += "\n\nResponse:\n";
    return p;
}

// Counts win over fractions when non-negative; otherwise fractions are
// resolved as valid = round(f_v * n), test = round(f_t * n), train = rest.
struct SplitSpec {
    int64_t train_count = -1;
    int64_t valid_count = -1;
    int64_t test_count = -1;
    double valid_fraction = 1.0 / 30.0;
    double test_fraction = 1.0 / 30.0;
    uint64_t seed = 0;
};

struct Corpus {
    std::vector<InstructionRecord> train;
    std::vector<InstructionRecord> valid;
    std::vector<InstructionRecord> test;
};

// JSONL with keys instruction/input/output; deterministic seeded shuffle, then
// split. Malformed lines and records with empty instruction or output abort
// the load with a message listing every offending line number.
Corpus load_corpus(const std::string& path, const SplitSpec& split);

std::vector<InstructionRecord> load_records_jsonl(const std::string& path);
void save_records_jsonl(const std::string& path, std::span<const InstructionRecord> records);

Corpus split_records(std::vector<InstructionRecord> records, const SplitSpec& split);

// One record rendered to token ids: prompt (mask 0) + response + eos (mask 1),
// prompt left-truncated to fit max_len. Empty optional when the response
// cannot fit alongside at least one prompt token.
struct EncodedExample {
    std::vector<int> tokens;
    std::vector<uint8_t> mask;
    int prompt_len = 0;
};

std::optional<EncodedExample> encode_example(const InstructionRecord& r, int max_len);

struct TokenBatch {
    std::vector<std::vector<int>> token_ids;    // [B][M], padded with pad_id
    std::vector<std::vector<uint8_t>> loss_mask;  // [B][M], 1 on response tokens + eos
    std::vector<int> lengths;                   // true (unpadded) row lengths
    int pad_id = tokens::kPad;

    int size() const { return static_cast<int>(token_ids.size()); }
    int max_len() const { return token_ids.empty() ? 0 : static_cast<int>(token_ids[0].size()); }
};

// Renders each record as prompt + response + eos, left-truncating the prompt
// (never the response) to fit max_len. Records whose response cannot fit next
// to at least one prompt token are skipped and reported via `warnings`.
// Record order is shuffled by `seed`; the final partial batch is kept.
std::vector<TokenBatch> build_batches(std::span<const InstructionRecord> records, int max_len,
                                      int batch_size, uint64_t seed,
                                      std::vector<std::string>* warnings = nullptr);

// Deterministic instruction-following corpus drawn from a small task grammar
// (copy / reverse / counting / opposites / first letters / sums).
std::vector<InstructionRecord> synthetic_corpus(int64_t n, uint64_t seed);

}  // namespace kdlab
