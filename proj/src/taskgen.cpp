#include "cotlab/taskgen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cotlab/evalharness.hpp"

namespace cotlab {

using json = nlohmann::json;

namespace {

const std::vector<std::string>& label_pool() {
    static const std::vector<std::string> pool = [] {
        std::vector<std::string> v;
        for (char c = 'A'; c <= 'L'; ++c) v.emplace_back(1, c);
        return v;
    }();
    return pool;
}

}  // namespace

void SceneConfig::validate() const {
    if (min_bars < 2 || max_bars > 8 || min_bars > max_bars)
        throw ConfigError("scene bar bounds must satisfy 2 <= min <= max <= 8");
    if (min_value < 0 || max_value > 99 || min_value > max_value)
        throw ConfigError("scene value bounds must satisfy 0 <= min <= max <= 99");
    if (teacher_err_prob < 0.0 || teacher_err_prob > 1.0)
        throw ConfigError("teacher_err_prob must lie in [0, 1]");
}

const Bar* Scene::find(const std::string& label) const {
    for (const auto& b : bars)
        if (b.label == label) return &b;
    return nullptr;
}

int Scene::value_of(const std::string& label) const {
    const Bar* b = find(label);
    if (!b) throw DataError("label not in scene: " + label);
    return b->value;
}

std::vector<std::string> Scene::serialize() const {
    std::vector<std::string> out;
    out.reserve(bars.size() * 2 + 2);
    out.push_back("chart");
    for (const auto& b : bars) {
        out.push_back(b.label);
        out.push_back(std::to_string(b.value));
    }
    out.push_back(".");
    return out;
}

const char* to_string(QuestionKind k) {
    switch (k) {
        case QuestionKind::lookup: return "lookup";
        case QuestionKind::count: return "count";
        case QuestionKind::sum: return "sum";
        case QuestionKind::difference: return "difference";
        case QuestionKind::argmax: return "argmax";
        case QuestionKind::argmin: return "argmin";
        case QuestionKind::compare: return "compare";
    }
    throw ConfigError("bad question kind");
}

QuestionKind question_kind_from_string(const std::string& s) {
    for (int i = 0; i < kNumQuestionKinds; ++i) {
        auto k = static_cast<QuestionKind>(i);
        if (s == to_string(k)) return k;
    }
    throw DataError("unknown question kind: " + s);
}

std::vector<std::string> Question::render() const {
    switch (kind) {
        case QuestionKind::lookup:
            return {"what", "is", "the", "value", "of", args.at(0), "?"};
        case QuestionKind::count:
            return {"how", "many", "bars", "are", "there", "?"};
        case QuestionKind::sum:
            return {"what", "is", "the", "sum", "of", args.at(0), "and", args.at(1), "?"};
        case QuestionKind::difference:
            return {"what", "is", "the", "difference", "between", args.at(0), "and", args.at(1), "?"};
        case QuestionKind::argmax:
            return {"which", "bar", "has", "the", "largest", "value", "?"};
        case QuestionKind::argmin:
            return {"which", "bar", "has", "the", "smallest", "value", "?"};
        case QuestionKind::compare:
            return {"is", args.at(0), "greater", "than", args.at(1), "?"};
    }
    throw ConfigError("bad question kind");
}

Scene gen_scene(const SceneConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Scene s;
    int n = rng.range(config.min_bars, config.max_bars);
    // Distinct labels: sample without replacement from the pool prefix.
    std::vector<std::string> pool = label_pool();
    for (int i = 0; i < n; ++i) {
        size_t j = static_cast<size_t>(i) + static_cast<size_t>(rng.below(pool.size() - static_cast<size_t>(i)));
        std::swap(pool[static_cast<size_t>(i)], pool[j]);
    }
    pool.resize(static_cast<size_t>(n));
    std::sort(pool.begin(), pool.end());
    for (const auto& label : pool)
        s.bars.push_back({label, rng.range(config.min_value, config.max_value)});
    return s;
}

std::string solve(const Scene& scene, const Question& q) {
    switch (q.kind) {
        case QuestionKind::lookup:
            return std::to_string(scene.value_of(q.args.at(0)));
        case QuestionKind::count:
            return std::to_string(scene.bars.size());
        case QuestionKind::sum:
            return std::to_string(scene.value_of(q.args.at(0)) + scene.value_of(q.args.at(1)));
        case QuestionKind::difference:
            return std::to_string(std::abs(scene.value_of(q.args.at(0)) - scene.value_of(q.args.at(1))));
        case QuestionKind::argmax:
        case QuestionKind::argmin: {
            bool want_max = q.kind == QuestionKind::argmax;
            const Bar* best = &scene.bars.at(0);
            for (const auto& b : scene.bars) {
                if (want_max ? b.value > best->value : b.value < best->value) best = &b;
            }
            for (const auto& b : scene.bars) {
                if (&b != best && b.value == best->value)
                    throw TieError(std::string("value tie in ") + to_string(q.kind));
            }
            return best->label;
        }
        case QuestionKind::compare:
            return scene.value_of(q.args.at(0)) > scene.value_of(q.args.at(1)) ? "yes" : "no";
    }
    throw ConfigError("bad question kind");
}

std::string teacher_rationale(const Scene& scene, const Question& q) {
    std::vector<std::string> w;
    auto say_value = [&](const std::string& label) {
        w.push_back(label);
        w.push_back("is");
        w.push_back(std::to_string(scene.value_of(label)));
        w.push_back(".");
    };
    std::string gold = solve(scene, q);
    switch (q.kind) {
        case QuestionKind::lookup:
            say_value(q.args.at(0));
            break;
        case QuestionKind::count: {
            w.insert(w.end(), {"the", "bars", "are"});
            for (const auto& b : scene.bars) w.push_back(b.label);
            w.push_back(".");
            w.insert(w.end(), {"there", "are", std::to_string(scene.bars.size()), "bars", "."});
            break;
        }
        case QuestionKind::sum: {
            say_value(q.args.at(0));
            say_value(q.args.at(1));
            int a = scene.value_of(q.args.at(0));
            int b = scene.value_of(q.args.at(1));
            w.insert(w.end(), {std::to_string(a), "+", std::to_string(b), "=", std::to_string(a + b), "."});
            break;
        }
        case QuestionKind::difference: {
            say_value(q.args.at(0));
            say_value(q.args.at(1));
            int a = scene.value_of(q.args.at(0));
            int b = scene.value_of(q.args.at(1));
            int hi = std::max(a, b), lo = std::min(a, b);
            w.insert(w.end(), {std::to_string(hi), "-", std::to_string(lo), "=", std::to_string(hi - lo), "."});
            break;
        }
        case QuestionKind::argmax:
        case QuestionKind::argmin: {
            for (const auto& b : scene.bars) say_value(b.label);
            w.insert(w.end(),
                     {"the", q.kind == QuestionKind::argmax ? "largest" : "smallest", "is", gold, "."});
            break;
        }
        case QuestionKind::compare: {
            say_value(q.args.at(0));
            say_value(q.args.at(1));
            int a = scene.value_of(q.args.at(0));
            int b = scene.value_of(q.args.at(1));
            const char* rel = a > b ? ">" : (a < b ? "<" : "=");
            w.insert(w.end(), {std::to_string(a), rel, std::to_string(b), "."});
            break;
        }
    }
    w.insert(w.end(), {"###", "Answer:", gold});
    return join(w, " ");
}

namespace {

Question gen_question(const Scene& scene, Rng& rng) {
    Question q;
    q.kind = static_cast<QuestionKind>(rng.below(kNumQuestionKinds));
    q.style = q.kind == QuestionKind::compare ? AnswerStyle::binary_choice : AnswerStyle::short_answer;
    size_t n = scene.bars.size();
    switch (q.kind) {
        case QuestionKind::lookup:
            q.args = {scene.bars[rng.below(n)].label};
            break;
        case QuestionKind::sum:
        case QuestionKind::difference:
        case QuestionKind::compare: {
            size_t i = rng.below(n);
            size_t j = rng.below(n - 1);
            if (j >= i) ++j;
            q.args = {scene.bars[i].label, scene.bars[j].label};
            break;
        }
        default:
            break;
    }
    return q;
}

// Replaces the derived answer in an otherwise well-formed rationale; used by
// the fallible-teacher mode.
std::string corrupt_rationale(const Scene& scene, const Question& q, const std::string& gold, Rng& rng);

std::string corrupt_answer(const Scene& scene, const Question& q, const std::string& gold,
                           const SceneConfig& config, Rng& rng) {
    // Sample from the question's answer space until the draw differs from
    // gold; spaces here always have at least two elements, except degenerate
    // numeric configs which fall back to an out-of-range value.
    switch (q.kind) {
        case QuestionKind::compare:
            return gold == "yes" ? "no" : "yes";
        case QuestionKind::argmax:
        case QuestionKind::argmin: {
            if (scene.bars.size() < 2) return gold + "X";
            for (;;) {
                const std::string& pick = scene.bars[rng.below(scene.bars.size())].label;
                if (pick != gold) return pick;
            }
        }
        default: {
            int lo = 0, hi = 0;
            switch (q.kind) {
                case QuestionKind::lookup: lo = config.min_value; hi = config.max_value; break;
                case QuestionKind::count: lo = config.min_bars; hi = config.max_bars; break;
                case QuestionKind::sum: lo = 2 * config.min_value; hi = 2 * config.max_value; break;
                case QuestionKind::difference: lo = 0; hi = config.max_value - config.min_value; break;
                default: break;
            }
            if (lo >= hi) return std::to_string(hi + 1);
            for (;;) {
                std::string pick = std::to_string(rng.range(lo, hi));
                if (pick != gold) return pick;
            }
        }
    }
}

std::string corrupt_rationale(const Scene& scene, const Question& q, const std::string& gold, Rng& rng) {
    std::string text = teacher_rationale(scene, q);
    SceneConfig wide;  // full-range answer space for the wrong derivation
    std::string wrong = corrupt_answer(scene, q, gold, wide, rng);
    // Swap the final answer (and the matching arithmetic result when present).
    size_t pos = text.rfind(gold);
    if (pos != std::string::npos) text.replace(pos, gold.size(), wrong);
    return text;
}

}  // namespace

std::vector<QAInstance> gen_dataset(const SceneConfig& config, int n, uint64_t seed) {
    config.validate();
    if (n < 0) throw ConfigError("dataset size must be non-negative");
    std::vector<QAInstance> out(static_cast<size_t>(n));
    Rng base(seed);
    parallel_for(static_cast<size_t>(n), [&](size_t i) {
        Rng rng = base.fork(i);
        QAInstance inst;
        for (;;) {
            Scene scene = gen_scene(config, rng.next_u64());
            Question q = gen_question(scene, rng);
            try {
                inst.gold_answer = solve(scene, q);
            } catch (const TieError&) {
                continue;  // regenerate; tied argmax/argmin draws are never emitted
            }
            inst.scene = std::move(scene);
            inst.question = std::move(q);
            break;
        }
        if (config.teacher_err_prob > 0.0 && rng.uniform01() < config.teacher_err_prob) {
            inst.teacher_rationale = corrupt_rationale(inst.scene, inst.question, inst.gold_answer, rng);
        } else {
            inst.teacher_rationale = teacher_rationale(inst.scene, inst.question);
        }
        inst.annotation = inst.gold_answer;
        inst.id = "q" + std::to_string(i);
        out[i] = std::move(inst);
    });
    return out;
}

std::vector<QAInstance> inject_noise(std::vector<QAInstance> dataset, double p_noise, uint64_t seed) {
    if (p_noise < 0.0 || p_noise > 1.0) throw ConfigError("p_noise must lie in [0, 1]");
    if (p_noise == 0.0) return dataset;
    SceneConfig wide;  // answer-space bounds for numeric corruption
    Rng base(seed);
    parallel_for(dataset.size(), [&](size_t i) {
        Rng rng = base.fork(i);
        if (rng.uniform01() < p_noise) {
            QAInstance& inst = dataset[i];
            inst.annotation = corrupt_answer(inst.scene, inst.question, inst.gold_answer, wide, rng);
        }
    });
    return dataset;
}

std::vector<QAInstance> distill_filter(const std::vector<QAInstance>& dataset) {
    // Keeps instances whose teacher-derived answer equals the annotation;
    // exact string equality, the same notion under which noise corruption
    // guarantees a difference.
    std::vector<QAInstance> kept;
    kept.reserve(dataset.size());
    for (const auto& inst : dataset) {
        auto teacher_answer = extract_answer(inst.teacher_rationale);
        if (teacher_answer && *teacher_answer == trim(inst.annotation)) kept.push_back(inst);
    }
    return kept;
}

void split_dataset(std::vector<QAInstance>& dataset, const SplitFractions& fractions, uint64_t seed) {
    double total = fractions.train + fractions.dev + fractions.test;
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (fractions.train < 0 || fractions.dev < 0 || fractions.test < 0)
        throw ConfigError("split fractions must be non-negative");
    size_t n = dataset.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng(seed).derive("split");
    rng.shuffle(order);
    auto n_train = static_cast<size_t>(std::floor(fractions.train * static_cast<double>(n) + 0.5));
    auto n_dev = static_cast<size_t>(std::floor(fractions.dev * static_cast<double>(n) + 0.5));
    if (n_train + n_dev > n) n_dev = n - n_train;
    for (size_t r = 0; r < n; ++r) {
        const char* tag = r < n_train ? "train" : (r < n_train + n_dev ? "dev" : "test");
        dataset[order[r]].split = tag;
    }
}

std::vector<QAInstance> filter_split(const std::vector<QAInstance>& dataset, const std::string& split) {
    std::vector<QAInstance> out;
    for (const auto& inst : dataset)
        if (inst.split == split) out.push_back(inst);
    return out;
}

namespace {

json instance_to_json(const QAInstance& inst) {
    json bars = json::array();
    for (const auto& b : inst.scene.bars) bars.push_back({{"label", b.label}, {"value", b.value}});
    return json{{"id", inst.id},
                {"scene", {{"bars", bars}}},
                {"question",
                 {{"kind", to_string(inst.question.kind)},
                  {"args", inst.question.args},
                  {"answer_style",
                   inst.question.style == AnswerStyle::binary_choice ? "binary-choice" : "short-answer"}}},
                {"gold_answer", inst.gold_answer},
                {"teacher_rationale", inst.teacher_rationale},
                {"annotation", inst.annotation},
                {"split", inst.split}};
}

QAInstance instance_from_json(const json& j) {
    QAInstance inst;
    inst.id = j.at("id").get<std::string>();
    for (const auto& b : j.at("scene").at("bars"))
        inst.scene.bars.push_back({b.at("label").get<std::string>(), b.at("value").get<int>()});
    const auto& q = j.at("question");
    inst.question.kind = question_kind_from_string(q.at("kind").get<std::string>());
    inst.question.args = q.at("args").get<std::vector<std::string>>();
    inst.question.style = q.at("answer_style").get<std::string>() == "binary-choice"
                              ? AnswerStyle::binary_choice
                              : AnswerStyle::short_answer;
    inst.gold_answer = j.at("gold_answer").get<std::string>();
    inst.teacher_rationale = j.at("teacher_rationale").get<std::string>();
    inst.annotation = j.at("annotation").get<std::string>();
    inst.split = j.at("split").get<std::string>();
    return inst;
}

}  // namespace

void save_dataset_jsonl(const std::vector<QAInstance>& dataset, const std::string& path) {
    std::ostringstream out;
    for (const auto& inst : dataset) out << instance_to_json(inst).dump() << "\n";
    write_text_file(path, out.str());
}

std::vector<QAInstance> load_dataset_jsonl(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<QAInstance> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(instance_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
        }
    }
    return out;
}

}  // namespace cotlab
