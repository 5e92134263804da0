#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cotlab/common.hpp"
#include "cotlab/vocab.hpp"

namespace cotlab {

struct SceneConfig {
    int min_bars = 2;
    int max_bars = 8;
    int min_value = 0;
    int max_value = 99;
    // Fallible-teacher mode: the rationale derives a wrong answer with this
    // probability. Off by default so the mismatch filter is exact.
    double teacher_err_prob = 0.0;

    void validate() const;
};

struct Bar {
    std::string label;
    int value = 0;
};

struct Scene {
    std::vector<Bar> bars;

    const Bar* find(const std::string& label) const;
    int value_of(const std::string& label) const;  // DataError if absent
    // Token serialization of the "image": chart L1 v1 ... Lk vk .
    std::vector<std::string> serialize() const;
};

enum class QuestionKind { lookup, count, sum, difference, argmax, argmin, compare };

constexpr int kNumQuestionKinds = 7;
const char* to_string(QuestionKind k);
QuestionKind question_kind_from_string(const std::string& s);

enum class AnswerStyle { short_answer, binary_choice };

struct Question {
    QuestionKind kind = QuestionKind::lookup;
    std::vector<std::string> args;  // 0-2 bar labels
    AnswerStyle style = AnswerStyle::short_answer;

    std::vector<std::string> render() const;  // question text tokens
};

struct QAInstance {
    std::string id;
    Scene scene;
    Question question;
    std::string gold_answer;
    std::string teacher_rationale;
    std::string annotation;  // equals gold_answer unless noise-corrupted
    std::string split = "train";
};

// Thrown by solve() for argmax/argmin value ties; the generator regenerates
// such draws and never emits them.
struct TieError : NumericError {
    using NumericError::NumericError;
};

Scene gen_scene(const SceneConfig& config, uint64_t seed);
std::string solve(const Scene& scene, const Question& q);
std::string teacher_rationale(const Scene& scene, const Question& q);

// n instances with per-index RNG streams derived from (seed, index).
std::vector<QAInstance> gen_dataset(const SceneConfig& config, int n, uint64_t seed);

std::vector<QAInstance> inject_noise(std::vector<QAInstance> dataset, double p_noise, uint64_t seed);
std::vector<QAInstance> distill_filter(const std::vector<QAInstance>& dataset);

struct SplitFractions {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
};

// Tags each instance's split field; deterministic in (dataset order, seed).
void split_dataset(std::vector<QAInstance>& dataset, const SplitFractions& fractions, uint64_t seed);
std::vector<QAInstance> filter_split(const std::vector<QAInstance>& dataset, const std::string& split);

void save_dataset_jsonl(const std::vector<QAInstance>& dataset, const std::string& path);
std::vector<QAInstance> load_dataset_jsonl(const std::string& path);

}  // namespace cotlab
