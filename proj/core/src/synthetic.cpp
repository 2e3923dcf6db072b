#include <array>
#include <string>

#include "kdlab/data.hpp"
#include "kdlab/rng.hpp"

namespace kdlab {

namespace {

constexpr std::array<const char*, 24> kWords = {
    "sun",  "moon", "star", "tree", "fish", "bird",  "cat",  "dog",
    "book", "door", "rain", "snow", "wind", "fire",  "leaf", "rock",
    "milk", "corn", "gold", "sand", "wolf", "horse", "apple", "plum",
};

constexpr std::array<std::array<const char*, 2>, 7> kOpposites = {{
    {"hot", "cold"},
    {"big", "small"},
    {"up", "down"},
    {"day", "night"},
    {"fast", "slow"},
    {"yes", "no"},
    {"left", "right"},
}};

std::string pick_word(Rng& rng) { return kWords[rng.below(kWords.size())]; }

}  // namespace

// Eight fixed task families over a tiny word pool; every record is a pure
// function of the rng stream, so (n, seed) pins the corpus exactly.
std::vector<InstructionRecord> synthetic_corpus(int64_t n, uint64_t seed) {
    if (n < 0) {
        throw std::invalid_argument("synthetic_corpus: n must be non-negative");
    }
    Rng rng = derive_stream(seed, "synthetic_corpus");
    std::vector<InstructionRecord> records;
    records.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        InstructionRecord r;
        switch (rng.below(8)) {
            case 0: {
                r.instruction = "Repeat the word.";
                r.input = pick_word(rng);
                r.output = r.input;
                break;
            }
            case 1: {
                r.instruction = "Say the word twice.";
                r.input = pick_word(rng);
                r.output = r.input + " " + r.input;
                break;
            }
            case 2: {
                r.instruction = "Spell the word backwards.";
                r.input = pick_word(rng);
                r.output = std::string(r.input.rbegin(), r.input.rend());
                break;
            }
            case 3: {
                r.instruction = "Count the letters in the word.";
                r.input = pick_word(rng);
                r.output = std::to_string(r.input.size());
                break;
            }
            case 4: {
                const auto& pair = kOpposites[rng.below(kOpposites.size())];
                const uint64_t side = rng.below(2);
                r.instruction = "Give the opposite.";
                r.input = pair[side];
                r.output = pair[1 - side];
                break;
            }
            case 5: {
                r.instruction = "Give the first letter of the word.";
                r.input = pick_word(rng);
                r.output = r.input.substr(0, 1);
                break;
            }
            case 6: {
                r.instruction = "Give the last letter of the word.";
                r.input = pick_word(rng);
                r.output = r.input.substr(r.input.size() - 1, 1);
                break;
            }
            default: {
                const int a = static_cast<int>(rng.below(10));
                const int b = static_cast<int>(rng.below(10));
                r.instruction = "Add the numbers.";
                r.input = std::to_string(a) + " + " + std::to_string(b);
                r.output = std::to_string(a + b);
                break;
            }
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace kdlab
