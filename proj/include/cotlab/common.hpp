#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cotlab {

// Error categories; the CLI maps them to exit codes (config=2, data=3, numeric=4).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit. Used for vocab hashes, file hashes and checkpoint checksums.
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t hash_string(const std::string& s, uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

uint64_t hash_file(const std::string& path);
std::string hex64(uint64_t v);

// Deterministic RNG: splitmix64 core with hand-rolled distributions so that
// streams are bit-stable across standard libraries and platforms.
// Substreams derive from the construction seed, not the advanced state, so a
// stream forked per item is independent of how much the parent has drawn.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw ConfigError("Rng::below: n must be positive");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    int range(int lo, int hi) {  // inclusive bounds
        if (hi < lo) throw ConfigError("Rng::range: empty interval");
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo) + 1));
    }

    // 53-bit uniform in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double gaussian() {
        // Box-Muller; 1-u keeps the log argument in (0, 1].
        double u1 = 1.0 - uniform01();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Labeled substream (stage names) and indexed substream (per-item streams).
    Rng derive(const std::string& label) const {
        uint64_t h = hash_string(label, kFnvOffset ^ mix_(seed_));
        return Rng(mix_(h));
    }
    Rng fork(uint64_t index) const {
        uint64_t h = fnv1a64(&index, sizeof(index), kFnvOffset ^ mix_(seed_ + 0x517CC1B727220A95ull));
        return Rng(mix_(h));
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static uint64_t mix_(uint64_t z) {
        z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDull;
        z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ull;
        return z ^ (z >> 33);
    }
    uint64_t seed_;
    uint64_t state_;
};

// Runs fn(0..n-1) on up to `workers` threads. Items must be independent;
// callers keep determinism by writing to index-addressed slots and reducing
// in index order afterwards.
void parallel_for(size_t n, const std::function<void(size_t)>& fn, unsigned workers = 0);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::string format_double(double v, int precision = 6);
std::string trim(const std::string& s);
std::string lowercase(const std::string& s);
std::vector<std::string> split_ws(const std::string& s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

// Full-string numeric parse; returns false for empty/partial/non-finite.
bool parse_number(const std::string& s, double& out);

}  // namespace cotlab
