#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cotlab/common.hpp"

namespace cotlab {

// Word-level vocabulary. The chart world uses a fixed token set: sequence
// markers, the answer marker pair, bar labels, integer atoms and template
// words, so every dataset/checkpoint built from the same world shares one
// vocab hash.
class Vocab {
  public:
    explicit Vocab(std::vector<std::string> tokens);

    static const Vocab& world();  // the fixed chart-QA vocabulary

    int size() const { return static_cast<int>(tokens_.size()); }
    uint64_t hash() const { return hash_; }
    int bos_id() const { return bos_id_; }
    int eos_id() const { return eos_id_; }

    bool contains(const std::string& tok) const { return index_.count(tok) != 0; }
    int id(const std::string& tok) const;  // DataError on unknown token
    const std::string& token(int id) const;

    std::vector<int> encode(const std::vector<std::string>& words) const;
    std::vector<int> encode_text(const std::string& text) const;  // split on whitespace
    // Joins tokens with single spaces; skips <bos>/<eos> when skip_special.
    std::string decode(const std::vector<int>& ids, bool skip_special = true) const;

    static constexpr const char* kBos = "<bos>";
    static constexpr const char* kEos = "<eos>";

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    uint64_t hash_ = 0;
    int bos_id_ = -1;
    int eos_id_ = -1;
};

}  // namespace cotlab
