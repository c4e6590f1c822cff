#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace cirlab {

// xoshiro256++ with splitmix64 seeding. All draws are hand-rolled so that
// sequences are identical across standard libraries; std::uniform_* makes
// no such guarantee. Substreams are derived from (base seed, name) and are
// independent of how many values the parent has drawn, so components seeded
// from the same run seed can be varied independently.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Independent generator derived from the base seed and a stream name.
    Rng substream(std::string_view name) const;

    std::uint64_t next_u64();

    // uniform in [0,1) with 53 random bits
    double uniform01();
    float uniform(float lo, float hi);

    // uniform in [0, n); n must be positive
    int uniform_int(int n);

    // Box-Muller; caches the spare deviate
    float normal(float mean, float stddev);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t base_seed() const { return base_seed_; }

private:
    std::uint64_t state_[4];
    std::uint64_t base_seed_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

// FNV-1a over raw bytes; used for substream derivation and file digests.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t basis = 14695981039346656037ULL);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t basis = 14695981039346656037ULL);

} // namespace cirlab
