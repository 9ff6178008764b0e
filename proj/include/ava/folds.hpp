#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ava/data.hpp"
#include "ava/errors.hpp"
#include "ava/metrics.hpp"

namespace ava {

constexpr std::size_t kNumFolds = 6;

/// Partition of trials into 6 subject-independent folds. Fold 0 is always
/// the original validation partition.
struct FoldPlan {
    std::vector<std::vector<std::string>> folds{kNumFolds};

    std::size_t fold_of(const std::string& trial_id) const {
        for (std::size_t f = 0; f < folds.size(); ++f)
            for (const auto& id : folds[f])
                if (id == trial_id) return f;
        throw ValidationError("trial not in fold plan: " + trial_id);
    }
};

/// Fold 0 keeps the validation partition unchanged; training trials are
/// grouped by subject and the groups are packed greedily (largest first)
/// into 5 folds, with a whole-group rebalance pass to even the counts.
inline FoldPlan make_folds(const std::vector<ManifestEntry>& manifest, std::uint64_t seed) {
    FoldPlan plan;
    std::map<std::string, std::vector<std::string>> by_subject;  // train only
    for (const auto& e : manifest) {
        if (e.partition == "val")
            plan.folds[0].push_back(e.trial_id);
        else
            by_subject[e.subject_id].push_back(e.trial_id);
    }
    std::size_t total = 0;
    for (auto& [s, trials] : by_subject) total += trials.size();
    if (total == 0) throw EmptyFold("make_folds: no training trials in manifest");
    std::size_t capacity = (total + 4) / 5;
    for (auto& [s, trials] : by_subject)
        if (trials.size() > capacity)
            throw SubjectSplitImpossible("subject " + s + " has " + std::to_string(trials.size()) +
                                         " trials, exceeding fold capacity " +
                                         std::to_string(capacity));

    std::vector<std::pair<std::string, std::vector<std::string>>> groups(by_subject.begin(),
                                                                         by_subject.end());
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    std::stable_sort(groups.begin(), groups.end(),
                     [](const auto& a, const auto& b) { return a.second.size() > b.second.size(); });

    // group index -> fold (1..5); greedy least-filled assignment
    std::vector<std::size_t> assign(groups.size());
    std::vector<std::size_t> sizes(5, 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::size_t best = 0;
        for (std::size_t f = 1; f < 5; ++f)
            if (sizes[f] < sizes[best]) best = f;
        assign[g] = best;
        sizes[best] += groups[g].second.size();
    }
    // Rebalance: move whole subject groups from the largest fold to the
    // smallest while that strictly shrinks the spread.
    for (bool moved = true; moved;) {
        moved = false;
        std::size_t lo = 0, hi = 0;
        for (std::size_t f = 1; f < 5; ++f) {
            if (sizes[f] < sizes[lo]) lo = f;
            if (sizes[f] > sizes[hi]) hi = f;
        }
        if (sizes[hi] <= sizes[lo] + 1) break;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            std::size_t gs = groups[g].second.size();
            if (assign[g] == hi && gs > 0 && sizes[hi] - gs >= sizes[lo] &&
                sizes[lo] + gs < sizes[hi]) {
                assign[g] = lo;
                sizes[hi] -= gs;
                sizes[lo] += gs;
                moved = true;
                break;
            }
        }
    }
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (const auto& id : groups[g].second) plan.folds[1 + assign[g]].push_back(id);
    for (auto& f : plan.folds) std::sort(f.begin(), f.end());
    return plan;
}

inline void write_fold_plan(const std::filesystem::path& path, const FoldPlan& plan) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "trial_id,fold\n";
    for (std::size_t f = 0; f < plan.folds.size(); ++f)
        for (const auto& id : plan.folds[f]) os << id << "," << f << "\n";
}

inline FoldPlan read_fold_plan(const std::filesystem::path& path) {
    FoldPlan plan;
    auto lines = read_lines(path);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = split_csv_line(lines[i]);
        if (f.size() != 2) throw MalformedRow("fold plan row " + std::to_string(i + 1));
        std::size_t fold = std::size_t(detail::parse_double_field(f[1], path.string()));
        if (fold >= kNumFolds) throw MalformedRow("fold index out of range: " + f[1]);
        plan.folds[fold].push_back(f[0]);
    }
    return plan;
}

// ---- prediction fusion ----

/// K prediction sequences over identical frames.
using RaterSet = std::vector<std::vector<double>>;

constexpr double kWeightFloor = 1e-6;

namespace detail {
inline void validate_raters(const RaterSet& raters) {
    if (raters.size() < 2) throw DegenerateRaters("need at least 2 raters");
    for (const auto& r : raters)
        if (r.size() != raters[0].size()) throw LengthMismatch("rater lengths differ");
    bool any_varies = false;
    for (const auto& r : raters) {
        for (double v : r)
            if (v != r[0]) any_varies = true;
    }
    if (!any_varies) throw DegenerateRaters("all raters constant");
}
}  // namespace detail

/// CCC-centering merge: every rater is shifted to the grand mean, weighted by
/// its CCC against the mean of the other centered raters (floored at 1e-6),
/// and the weighted sum is returned.
inline std::vector<double> ccc_center(const RaterSet& raters) {
    detail::validate_raters(raters);
    std::size_t k = raters.size(), n = raters[0].size();
    double grand = 0.0;
    for (const auto& r : raters)
        for (double v : r) grand += v;
    grand /= double(k * n);

    RaterSet centered(k, std::vector<double>(n));
    for (std::size_t i = 0; i < k; ++i) {
        double m = 0.0;
        for (double v : raters[i]) m += v;
        m /= double(n);
        for (std::size_t j = 0; j < n; ++j) centered[i][j] = raters[i][j] - m + grand;
    }

    std::vector<double> weights(k);
    double wsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> others(n, 0.0);
        for (std::size_t o = 0; o < k; ++o) {
            if (o == i) continue;
            for (std::size_t j = 0; j < n; ++j) others[j] += centered[o][j];
        }
        for (double& v : others) v /= double(k - 1);
        weights[i] = std::max(kWeightFloor, ccc(centered[i], others));
        wsum += weights[i];
    }
    std::vector<double> merged(n, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        double w = weights[i] / wsum;
        for (std::size_t j = 0; j < n; ++j) merged[j] += w * centered[i][j];
    }
    return merged;
}

/// Estimator weighted evaluator: confidence weights from each rater's
/// agreement (CCC) with the unweighted mean; no mean centering.
inline std::vector<double> ewe_merge(const RaterSet& raters) {
    detail::validate_raters(raters);
    std::size_t k = raters.size(), n = raters[0].size();
    std::vector<double> mean(n, 0.0);
    for (const auto& r : raters)
        for (std::size_t j = 0; j < n; ++j) mean[j] += r[j] / double(k);
    std::vector<double> weights(k);
    double wsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        weights[i] = std::max(kWeightFloor, ccc(raters[i], mean));
        wsum += weights[i];
    }
    std::vector<double> merged(n, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        double w = weights[i] / wsum;
        for (std::size_t j = 0; j < n; ++j) merged[j] += w * raters[i][j];
    }
    return merged;
}

/// Elementwise clamp to [-1, 1].
inline std::vector<double> clip(std::vector<double> seq) {
    for (double& v : seq) {
        if (!std::isfinite(v)) throw NonFiniteInput("clip: non-finite value");
        v = std::clamp(v, -1.0, 1.0);
    }
    return seq;
}

}  // namespace ava
