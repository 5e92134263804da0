#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cotlab/common.hpp"
#include "cotlab/vocab.hpp"

namespace cotlab {

struct ArchConfig {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int context_len = 160;
    int vocab_size = 0;  // filled from the vocab at init

    void validate() const;
    int64_t param_count() const;
};

enum class Stage { base, format1, direct2, cot3, sft4, rft, dpo };
const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

// Immutable value type holding the flat parameter vector; plays both the
// policy and the (frozen) reference role.
struct Checkpoint {
    ArchConfig arch;
    std::vector<double> params;
    uint64_t vocab_hash = 0;
    uint64_t seed_lineage = 0;
    Stage stage = Stage::base;
};

// Per-position log-probabilities of the realized response tokens (prompt
// positions masked out); total is their sum as stored.
struct LogProbTrace {
    std::vector<double> per_token;
    double total = 0.0;
};

Checkpoint init_checkpoint(const ArchConfig& arch, const Vocab& vocab, uint64_t seed,
                           double init_std = 0.08);

// Row t is the log-softmax over next tokens after tokens[0..t]. Exponentials
// of every row sum to 1 within 1e-9.
std::vector<std::vector<double>> forward_logprobs(const Checkpoint& ckpt, const std::vector<int>& tokens);

LogProbTrace seq_logprob(const Checkpoint& ckpt, const std::vector<int>& prompt,
                         const std::vector<int>& response);

struct SampleResult {
    std::vector<int> response;  // includes the end marker when emitted
    LogProbTrace trace;         // always under the untempered model
};

// Temperature sampling (temperature > 0). Stops at <eos> or max_len tokens.
SampleResult sample(const Checkpoint& ckpt, const std::vector<int>& prompt, double temperature,
                    int max_len, uint64_t seed);
// Argmax decode; ties broken toward the lowest token id.
SampleResult greedy_decode(const Checkpoint& ckpt, const std::vector<int>& prompt, int max_len);

struct SeqExample {
    std::vector<int> tokens;  // prompt followed by response
    int prompt_len = 0;
};

// Mean NLL over response tokens across the batch and its gradient.
std::pair<double, std::vector<double>> nll_loss_and_grad(const Checkpoint& ckpt,
                                                         const std::vector<SeqExample>& batch);

// Shared gradient machinery: accumulates grad of
//   sum_j coeff_j * sum_{t >= prompt_len_j} log p(tokens_j[t] | tokens_j[<t])
// into `grad` and returns the per-term response log-probability totals.
// Terms are evaluated independently (read-only params) and reduced in term
// order, so results do not depend on worker count.
struct SeqTerm {
    const std::vector<int>* tokens = nullptr;
    int prompt_len = 0;
    double coeff = 0.0;
};
std::vector<double> weighted_logprob_grad(const Checkpoint& ckpt, const std::vector<SeqTerm>& terms,
                                          std::vector<double>& grad);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
uint64_t checkpoint_digest(const Checkpoint& ckpt);  // content hash (params + arch + tags)

// Throws DataError when the checkpoint was built over a different vocab.
void require_vocab(const Checkpoint& ckpt, const Vocab& vocab);

}  // namespace cotlab
