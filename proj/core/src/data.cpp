#include "kdlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "kdlab/rng.hpp"

namespace kdlab {

std::vector<InstructionRecord> load_records_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("load_records_jsonl: cannot open " + path);
    }
    std::vector<InstructionRecord> records;
    std::vector<std::string> problems;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;  // blank line
        }
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            problems.push_back("line " + std::to_string(line_no) + ": malformed JSON");
            continue;
        }
        InstructionRecord r;
        r.instruction = j.value("instruction", std::string{});
        r.input = j.value("input", std::string{});
        r.output = j.value("output", std::string{});
        if (!r.valid()) {
            problems.push_back("line " + std::to_string(line_no) +
                               ": instruction and output must be nonempty");
            continue;
        }
        records.push_back(std::move(r));
    }
    if (!problems.empty()) {
        std::ostringstream msg;
        msg << "load_records_jsonl: " << problems.size() << " bad record(s) in " << path;
        for (const auto& p : problems) msg << "\n  " << p;
        throw std::runtime_error(msg.str());
    }
    return records;
}

void save_records_jsonl(const std::string& path, std::span<const InstructionRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("save_records_jsonl: cannot open " + path);
    }
    for (const auto& r : records) {
        nlohmann::json j{{"instruction", r.instruction}, {"input", r.input}, {"output", r.output}};
        out << j.dump() << '\n';
    }
}

Corpus split_records(std::vector<InstructionRecord> records, const SplitSpec& split) {
    const int64_t n = static_cast<int64_t>(records.size());
    int64_t valid_n, test_n, train_n;
    if (split.train_count >= 0 || split.valid_count >= 0 || split.test_count >= 0) {
        train_n = split.train_count;
        valid_n = split.valid_count;
        test_n = split.test_count;
        if (train_n < 0 || valid_n < 0 || test_n < 0 || train_n + valid_n + test_n > n) {
            throw std::invalid_argument("split_records: counts must be set together and fit the corpus");
        }
    } else {
        valid_n = std::llround(split.valid_fraction * static_cast<double>(n));
        test_n = std::llround(split.test_fraction * static_cast<double>(n));
        train_n = n - valid_n - test_n;
        if (train_n < 0) {
            throw std::invalid_argument("split_records: fractions exceed the corpus");
        }
    }
    Rng rng = derive_stream(split.seed, "corpus_shuffle");
    rng.shuffle(records);
    Corpus c;
    auto it = records.begin();
    c.train.assign(it, it + train_n);
    it += train_n;
    c.valid.assign(it, it + valid_n);
    it += valid_n;
    c.test.assign(it, it + test_n);
    return c;
}

Corpus load_corpus(const std::string& path, const SplitSpec& split) {
    return split_records(load_records_jsonl(path), split);
}

std::optional<EncodedExample> encode_example(const InstructionRecord& r, int max_len) {
    std::vector<int> prompt = tokenize(render_prompt(r));
    std::vector<int> response = tokenize(r.output);
    response.push_back(tokens::kEos);
    const int keep = max_len - static_cast<int>(response.size());
    if (keep < 1) {
        return std::nullopt;  // response leaves no room for any prompt token
    }
    if (static_cast<int>(prompt.size()) > keep) {
        prompt.erase(prompt.begin(), prompt.end() - keep);
    }
    EncodedExample ex;
    ex.prompt_len = static_cast<int>(prompt.size());
    ex.tokens = std::move(prompt);
    ex.tokens.insert(ex.tokens.end(), response.begin(), response.end());
    ex.mask.assign(ex.tokens.size(), 0);
    for (size_t i = ex.prompt_len; i < ex.tokens.size(); ++i) ex.mask[i] = 1;
    return ex;
}

std::vector<TokenBatch> build_batches(std::span<const InstructionRecord> records, int max_len,
                                      int batch_size, uint64_t seed,
                                      std::vector<std::string>* warnings) {
    if (batch_size < 1) {
        throw std::invalid_argument("build_batches: batch_size must be >= 1");
    }
    if (max_len < 2) {
        throw std::invalid_argument("build_batches: max_len must be >= 2");
    }
    std::vector<EncodedExample> examples;
    for (size_t i = 0; i < records.size(); ++i) {
        auto ex = encode_example(records[i], max_len);
        if (!ex) {
            if (warnings) {
                warnings->push_back("record " + std::to_string(i) +
                                    " skipped: response alone exceeds max_len");
            }
            continue;
        }
        examples.push_back(std::move(*ex));
    }
    Rng rng = derive_stream(seed, "batch_shuffle");
    rng.shuffle(examples);

    std::vector<TokenBatch> batches;
    for (size_t start = 0; start < examples.size(); start += batch_size) {
        const size_t end = std::min(examples.size(), start + batch_size);
        TokenBatch b;
        int batch_max = 0;
        for (size_t i = start; i < end; ++i) {
            batch_max = std::max(batch_max, static_cast<int>(examples[i].tokens.size()));
        }
        for (size_t i = start; i < end; ++i) {
            const auto& ex = examples[i];
            std::vector<int> row = ex.tokens;
            std::vector<uint8_t> mask = ex.mask;
            row.resize(batch_max, tokens::kPad);
            mask.resize(batch_max, 0);
            b.token_ids.push_back(std::move(row));
            b.loss_mask.push_back(std::move(mask));
            b.lengths.push_back(static_cast<int>(ex.tokens.size()));
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace kdlab
