#include "cotlab/vocab.hpp"

#include <set>

namespace cotlab {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() > 512) throw ConfigError("vocab exceeds 512 tokens");
    for (size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
            throw ConfigError("duplicate vocab token: " + tokens_[i]);
    }
    auto it_b = index_.find(kBos);
    auto it_e = index_.find(kEos);
    if (it_b == index_.end() || it_e == index_.end())
        throw ConfigError("vocab must contain <bos> and <eos>");
    bos_id_ = it_b->second;
    eos_id_ = it_e->second;
    uint64_t h = kFnvOffset;
    for (const auto& t : tokens_) {
        h = hash_string(t, h);
        h = fnv1a64("\n", 1, h);
    }
    hash_ = h;
}

const Vocab& Vocab::world() {
    static const Vocab v = [] {
        std::vector<std::string> toks = {kBos, kEos, "###", "Answer:"};
        // Bar labels. max_bars is 8; a few spares keep corruption draws varied.
        for (char c = 'A'; c <= 'L'; ++c) toks.emplace_back(1, c);
        // Integer atoms. Scene values live in [0, 99]; sums reach 198.
        for (int i = 0; i <= 198; ++i) toks.push_back(std::to_string(i));
        const char* words[] = {
            // scene serialization and rationale steps
            "chart", ".", "is", "+", "-", "=", ">", "<",
            "the", "bars", "are", "there", "largest", "smallest",
            // question renderings
            "what", "value", "of", "how", "many", "sum", "and", "difference",
            "between", "which", "bar", "has", "greater", "than", "?",
            // instruction templates
            "Answer", "question", "with", "a", "short", "answer",
            "Generate", "reason", "first", "then", "output",
            "yes", "no", "or", "directly"};
        for (const char* w : words) toks.push_back(w);
        return Vocab(std::move(toks));
    }();
    return v;
}

int Vocab::id(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw DataError("unknown token: '" + tok + "'");
    return it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words) const {
    std::vector<int> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
}

std::vector<int> Vocab::encode_text(const std::string& text) const {
    return encode(split_ws(text));
}

std::string Vocab::decode(const std::vector<int>& ids, bool skip_special) const {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (int i : ids) {
        if (skip_special && (i == bos_id_ || i == eos_id_)) continue;
        words.push_back(token(i));
    }
    return join(words, " ");
}

}  // namespace cotlab
