#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotlab/seqmodel.hpp"
#include "cotlab/taskgen.hpp"

namespace cotlab {

// Returns the trimmed remainder of the line after the last "### Answer:"
// marker; whitespace between "###" and "Answer:" is optional (both spellings
// appear in the wild). nullopt when no marker is present.
std::optional<std::string> extract_answer(const std::string& text);

// Relaxed matching: numeric pairs match within tol (relative, inclusive;
// gold 0 requires pred 0), everything else by case-insensitive trimmed
// equality. tol = 0 degenerates to numeric equality.
bool match_relaxed(const std::string& pred, const std::string& gold, double tol = 0.05);

enum class PromptMode { direct, cot };
const char* to_string(PromptMode m);
PromptMode prompt_mode_from_string(const std::string& s);

struct DecodingConfig {
    bool greedy = true;
    uint64_t sample_seed = 0;  // used when greedy == false
    int max_new_tokens = 64;
};

struct EvalReport {
    std::string ckpt_tag;
    PromptMode mode = PromptMode::cot;
    // kind -> (correct, total)
    std::map<std::string, std::pair<int, int>> per_kind;
    double overall = 0.0;
    int n = 0;
    DecodingConfig decoding;
    uint64_t seed = 0;

    std::string to_csv() const;
};

struct EvalOptions {
    DecodingConfig decoding;
    double relaxed_tol = 0.05;
    // Sanity mode: permits evaluating on instances tagged split == "train".
    bool allow_train_split = false;
};

EvalReport evaluate(const Vocab& vocab, const Checkpoint& ckpt, const std::vector<QAInstance>& eval_set,
                    PromptMode mode, const EvalOptions& opts = {});

}  // namespace cotlab
