#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ava/errors.hpp"
#include "ava/tensor.hpp"

namespace ava {

constexpr double kCccDegenerateEps = 1e-12;

/// Lin's concordance correlation coefficient with population (1/N) moments:
/// 2*cov(x,y) / (var(x) + var(y) + (mean(x) - mean(y))^2).
/// A degenerate denominator (both sequences constant with equal means)
/// yields 0 and sets *degenerate when provided.
inline double ccc(std::span<const double> x, std::span<const double> y,
                  bool* degenerate = nullptr) {
    if (x.size() != y.size()) throw LengthMismatch("ccc: sequence lengths differ");
    if (x.size() < 2) throw LengthMismatch("ccc: need at least 2 points");
    if (degenerate) *degenerate = false;
    double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    double denom = vx + vy + (mx - my) * (mx - my);
    if (denom < kCccDegenerateEps) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return 2.0 * cov / denom;
}

inline double ccc(const std::vector<double>& x, const std::vector<double>& y,
                  bool* degenerate = nullptr) {
    return ccc(std::span<const double>(x), std::span<const double>(y), degenerate);
}

/// Pearson correlation (evaluation diagnostic only).
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw LengthMismatch("pearson: sequence lengths differ");
    double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    double d = std::sqrt(vx * vy);
    return d < kCccDegenerateEps ? 0.0 : cov / d;
}

/// 1 - CCC(pred, gold) as a differentiable scalar, composed from tape ops so
/// the gradient falls out of the graph. gold is a constant.
inline Tensor ccc_loss(const Tensor& pred, const std::vector<double>& gold,
                       bool* degenerate = nullptr) {
    if (pred.size() != gold.size()) throw LengthMismatch("ccc_loss: length mismatch");
    if (pred.size() < 2) throw LengthMismatch("ccc_loss: need at least 2 points");
    double n = double(gold.size());
    double my = 0.0;
    for (double v : gold) my += v;
    my /= n;
    double vy = 0.0;
    for (double v : gold) vy += (v - my) * (v - my);
    vy /= n;

    // Degenerate denominator: constant pred with mean == my. Returns a
    // constant zero loss so a pathological window cannot abort training.
    {
        NoGradGuard ng;
        double mx = 0.0;
        for (double v : pred.data()) mx += v;
        mx /= n;
        double vx = 0.0;
        for (double v : pred.data()) vx += (v - mx) * (v - mx);
        vx /= n;
        if (vx + vy + (mx - my) * (mx - my) < kCccDegenerateEps) {
            if (degenerate) *degenerate = true;
            return Tensor::scalar(0.0);
        }
    }
    if (degenerate) *degenerate = false;

    std::vector<double> gc(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) gc[i] = gold[i] - my;
    Tensor gold_centered(pred.shape(), std::move(gc));

    Tensor mx = mean_all(pred);
    Tensor centered = sub_bcast(pred, mx);
    Tensor vx = mean_all(mul(centered, centered));
    Tensor cov = mean_all(mul(centered, gold_centered));
    Tensor mean_gap = add_scalar(mx, -my);
    Tensor denom = add(add_scalar(vx, vy), mul(mean_gap, mean_gap));
    Tensor ccc_val = div(mul_scalar(cov, 2.0), denom);
    return add_scalar(mul_scalar(ccc_val, -1.0), 1.0);
}

/// Per-target CCC plus the arithmetic mean, as reported per fold.
struct CccReport {
    double ccc_valence = 0.0;
    double ccc_arousal = 0.0;
    double mean_ccc = 0.0;
};

inline CccReport evaluate(const std::vector<double>& pred_v, const std::vector<double>& pred_a,
                          const std::vector<double>& gold_v, const std::vector<double>& gold_a) {
    CccReport r;
    r.ccc_valence = ccc(pred_v, gold_v);
    r.ccc_arousal = ccc(pred_a, gold_a);
    r.mean_ccc = (r.ccc_valence + r.ccc_arousal) / 2.0;
    return r;
}

}  // namespace ava
