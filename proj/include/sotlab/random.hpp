#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sotlab/core.hpp"

namespace sotlab {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream for item `index` under `seed`. The stream depends only on
/// (seed, index), never on which thread draws it.
inline Rng substream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Vose alias table: O(1) draws from a finite distribution.
class AliasTable {
public:
    AliasTable() = default;

    explicit AliasTable(std::span<const double> weights) {
        const std::size_t n = weights.size();
        if (n == 0) throw EmptyInput("alias table needs at least one weight");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw InvalidArgument("alias table weights must be nonnegative");
            total += w;
        }
        if (!(total > 0.0)) throw InvalidArgument("alias table weights sum to zero");
        prob_.assign(n, 0.0);
        alias_.assign(n, 0);
        std::vector<double> scaled(n);
        std::vector<std::size_t> small, large;
        for (std::size_t i = 0; i < n; ++i) {
            scaled[i] = weights[i] * static_cast<double>(n) / total;
            (scaled[i] < 1.0 ? small : large).push_back(i);
        }
        while (!small.empty() && !large.empty()) {
            std::size_t s = small.back();
            small.pop_back();
            std::size_t l = large.back();
            large.pop_back();
            prob_[s] = scaled[s];
            alias_[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            (scaled[l] < 1.0 ? small : large).push_back(l);
        }
        for (std::size_t i : large) prob_[i] = 1.0;
        for (std::size_t i : small) prob_[i] = 1.0;
    }

    std::size_t size() const { return prob_.size(); }

    std::size_t operator()(Rng& rng) const {
        double u = uniform01(rng) * static_cast<double>(prob_.size());
        auto i = static_cast<std::size_t>(u);
        if (i >= prob_.size()) i = prob_.size() - 1;
        return (u - static_cast<double>(i)) < prob_[i] ? i : alias_[i];
    }

private:
    std::vector<double> prob_;
    std::vector<std::size_t> alias_;
};

}  // namespace sotlab
