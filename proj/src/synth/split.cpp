#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aasn/synth.hpp"

namespace aasn::synth {

namespace {

// Sizes proportional to fractions that sum exactly to n.
std::array<int, 3> largest_remainder(int n, const std::array<double, 3>& f) {
    std::array<int, 3> sizes{};
    std::array<std::pair<double, int>, 3> rest{};
    int assigned = 0;
    for (int s = 0; s < 3; ++s) {
        const double exact = n * f[static_cast<std::size_t>(s)];
        sizes[static_cast<std::size_t>(s)] = static_cast<int>(std::floor(exact + 1e-9));
        rest[static_cast<std::size_t>(s)] = {exact - sizes[static_cast<std::size_t>(s)], s};
        assigned += sizes[static_cast<std::size_t>(s)];
    }
    std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; assigned < n; ++k, ++assigned) ++sizes[static_cast<std::size_t>(rest[static_cast<std::size_t>(k % 3)].second)];
    return sizes;
}

std::array<std::vector<int>, 2> by_class(std::span<const int> labels, std::uint64_t seed) {
    std::array<std::vector<int>, 2> classes;
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
        classes[labels[static_cast<std::size_t>(i)] != 0 ? 1 : 0].push_back(i);
    }
    std::mt19937_64 rng(seed);
    for (auto& members : classes) std::shuffle(members.begin(), members.end(), rng);
    return classes;
}

} // namespace

Split split_dataset(std::span<const int> labels, std::array<double, 3> fractions, std::uint64_t seed) {
    double total = 0;
    for (double f : fractions) {
        if (!(f >= 0)) throw ConfigError("split: fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw ConfigError("split: fractions sum to " + std::to_string(total) + ", expected 1");
    }
    const int n = static_cast<int>(labels.size());
    const std::array<int, 3> target = largest_remainder(n, fractions);
    for (int s = 0; s < 3; ++s) {
        if (target[static_cast<std::size_t>(s)] == 0) {
            throw ConfigError("split: part " + std::to_string(s) + " would be empty for " + std::to_string(n) +
                              " samples");
        }
    }

    const auto classes = by_class(labels, seed);
    // Per-class floors, then hand out the leftovers so that each class and
    // each part reach their exact totals, largest fractional part first.
    std::array<std::array<int, 3>, 2> count{};
    std::array<int, 3> part_need = target;
    std::array<int, 2> class_need{};
    struct Candidate {
        double frac;
        int cls;
        int part;
    };
    std::vector<Candidate> candidates;
    for (int c = 0; c < 2; ++c) {
        const int nc = static_cast<int>(classes[static_cast<std::size_t>(c)].size());
        int used = 0;
        for (int s = 0; s < 3; ++s) {
            const double exact = nc * fractions[static_cast<std::size_t>(s)];
            const int k = static_cast<int>(std::floor(exact + 1e-9));
            count[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)] = k;
            part_need[static_cast<std::size_t>(s)] -= k;
            used += k;
            candidates.push_back({exact - k, c, s});
        }
        class_need[static_cast<std::size_t>(c)] = nc - used;
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.frac > b.frac; });
    for (int pass = 0; pass < 2; ++pass) {
        for (const Candidate& cand : candidates) {
            int& cn = class_need[static_cast<std::size_t>(cand.cls)];
            int& pn = part_need[static_cast<std::size_t>(cand.part)];
            while (cn > 0 && pn > 0) {
                ++count[static_cast<std::size_t>(cand.cls)][static_cast<std::size_t>(cand.part)];
                --cn;
                --pn;
                if (pass == 0) break;
            }
        }
    }

    Split out;
    std::array<std::vector<int>*, 3> parts{&out.train, &out.val, &out.test};
    for (int c = 0; c < 2; ++c) {
        const auto& members = classes[static_cast<std::size_t>(c)];
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            const int k = count[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)];
            parts[static_cast<std::size_t>(s)]->insert(parts[static_cast<std::size_t>(s)]->end(),
                                                       members.begin() + static_cast<std::ptrdiff_t>(pos),
                                                       members.begin() + static_cast<std::ptrdiff_t>(pos + k));
            pos += static_cast<std::size_t>(k);
        }
    }
    for (auto* p : parts) std::sort(p->begin(), p->end());
    return out;
}

std::vector<Split> kfold_splits(std::span<const int> labels, int k, std::uint64_t seed) {
    if (k < 3) throw ConfigError("kfold: need at least 3 folds");
    if (static_cast<int>(labels.size()) < k) throw ConfigError("kfold: fewer samples than folds");
    const auto classes = by_class(labels, seed);
    std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
    int next = 0;
    for (const auto& members : classes) {
        for (int idx : members) {
            folds[static_cast<std::size_t>(next)].push_back(idx);
            next = (next + 1) % k;
        }
    }
    std::vector<Split> out;
    for (int f = 0; f < k; ++f) {
        Split s;
        for (int g = 0; g < k; ++g) {
            auto& dst = g == f ? s.test : g == (f + 1) % k ? s.val : s.train;
            dst.insert(dst.end(), folds[static_cast<std::size_t>(g)].begin(), folds[static_cast<std::size_t>(g)].end());
        }
        std::sort(s.train.begin(), s.train.end());
        std::sort(s.val.begin(), s.val.end());
        std::sort(s.test.begin(), s.test.end());
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace aasn::synth
