#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ava/errors.hpp"
#include "ava/io.hpp"

namespace ava {

constexpr double kLabelSentinel = -5.0;
constexpr std::size_t kImageSize = 48;   // stored face crops are 48 x 48 x 3
constexpr std::size_t kCropSize = 40;    // training/eval crop
constexpr std::size_t kFramePixels = 3 * kImageSize * kImageSize;

// ---- annotation parsing ----

struct AnnotationResult {
    std::vector<double> valence;
    std::vector<double> arousal;
    std::vector<std::size_t> frame_index_map;  // kept row -> original frame index
};

namespace detail {
inline double parse_double_field(const std::string& s, const std::string& context) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw MalformedRow("non-numeric field '" + s + "' in " + context);
    return v;
}
}  // namespace detail

/// Parses a "valence,arousal" annotation file, dropping every row where
/// either column carries the -5 sentinel. The returned map records each
/// kept row's original frame index.
inline AnnotationResult parse_annotations(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    if (lines.empty()) throw MalformedRow("empty annotation file: " + path.string());
    AnnotationResult out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto fields = split_csv_line(lines[i]);
        if (fields.size() != 2)
            throw MalformedRow("expected 2 columns at line " + std::to_string(i + 1) + " of " +
                               path.string());
        double v = detail::parse_double_field(fields[0], path.string());
        double a = detail::parse_double_field(fields[1], path.string());
        std::size_t frame = i - 1;
        if (v == kLabelSentinel || a == kLabelSentinel) continue;
        out.valence.push_back(v);
        out.arousal.push_back(a);
        out.frame_index_map.push_back(frame);
    }
    if (out.valence.empty()) throw EmptyTrial("all rows excluded in " + path.string());
    return out;
}

// ---- visual assembly ----

inline std::string frame_file_name(std::size_t frame_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.aff1", frame_index);
    return buf;
}

/// Builds the N x (3*48*48) frame matrix: row i holds the stored image for
/// original frame frame_index_map[i] if its file exists, zeros otherwise.
inline Matrix assemble_visual(const std::filesystem::path& frames_dir, std::size_t n,
                              const std::vector<std::size_t>& frame_index_map) {
    Matrix out;
    out.rows = n;
    out.cols = kFramePixels;
    out.values.assign(n * kFramePixels, 0.0f);
    for (std::size_t i = 0; i < n && i < frame_index_map.size(); ++i) {
        auto p = frames_dir / frame_file_name(frame_index_map[i]);
        if (!std::filesystem::exists(p)) continue;
        Matrix frame = read_aff1(p);
        if (frame.rows * frame.cols != kFramePixels)
            throw ShapeMismatch("frame file has wrong pixel count: " + p.string());
        std::copy(frame.values.begin(), frame.values.end(), out.values.begin() + i * kFramePixels);
    }
    return out;
}

// ---- length fitting ----

/// Pads (repeating the last row) or trims (dropping from the rear) a feature
/// matrix to exactly n rows.
inline Matrix fit_length(const Matrix& feat, std::size_t n) {
    if (feat.rows == 0) throw EmptyFeature("fit_length: empty feature matrix");
    Matrix out;
    out.rows = n;
    out.cols = feat.cols;
    out.values.resize(n * feat.cols);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t src = std::min(i, feat.rows - 1);
        std::copy(feat.values.begin() + src * feat.cols, feat.values.begin() + (src + 1) * feat.cols,
                  out.values.begin() + i * feat.cols);
    }
    return out;
}

// ---- word spans ----

struct WordSpan {
    std::string word;
    double start_s = 0.0;
    double end_s = 0.0;
};

inline std::vector<WordSpan> parse_word_spans(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    std::vector<WordSpan> spans;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto fields = split_csv_line(lines[i]);
        if (fields.size() != 3)
            throw MalformedRow("expected 3 columns at line " + std::to_string(i + 1) + " of " +
                               path.string());
        WordSpan s;
        s.word = fields[0];
        s.start_s = detail::parse_double_field(fields[1], path.string());
        s.end_s = detail::parse_double_field(fields[2], path.string());
        if (!(s.start_s < s.end_s))
            throw MalformedRow("span with start >= end at line " + std::to_string(i + 1) + " of " +
                               path.string());
        spans.push_back(std::move(s));
    }
    return spans;
}

/// Assigns each word's feature vector to every frame whose timestamp i/fps
/// falls in [start_s, end_s). Frames covered by no span stay zero.
inline Matrix populate_word_features(const std::vector<WordSpan>& spans, const Matrix& word_feats,
                                     std::size_t n, double fps) {
    if (spans.size() != word_feats.rows)
        throw ShapeMismatch("word span count does not match feature rows");
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].start_s < spans[i - 1].end_s)
            throw OverlappingSpans("overlapping word spans at index " + std::to_string(i));
    Matrix out;
    out.rows = n;
    out.cols = word_feats.cols;
    out.values.assign(n * word_feats.cols, 0.0f);
    std::size_t si = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double t = double(i) / fps;
        while (si < spans.size() && spans[si].end_s <= t) ++si;
        if (si < spans.size() && spans[si].start_s <= t && t < spans[si].end_s)
            std::copy(word_feats.values.begin() + si * word_feats.cols,
                      word_feats.values.begin() + (si + 1) * word_feats.cols,
                      out.values.begin() + i * out.cols);
    }
    return out;
}

// ---- windowing ----

struct WindowConfig {
    std::size_t window_len = 300;
    std::size_t hop = 200;
    // Training adds a second deterministic pass of full windows at this
    // offset, realizing the 33%-overlap data expansion.
    std::size_t overlap_offset = 100;
};

enum class WindowMode { Train, Eval };

struct Window {
    std::size_t start = 0;
    std::size_t end = 0;  // exclusive, clamped to N; frames [end, start+len) are zero pad
    std::size_t len = 0;  // always window_len
};

/// Window starts at 0, hop, 2*hop, ... until the trial tail is covered; the
/// final window is zero-padded to window_len. Train mode appends a second
/// pass of shifted full windows.
inline std::vector<Window> make_windows(std::size_t n, const WindowConfig& cfg, WindowMode mode) {
    if (n == 0) throw EmptyFeature("make_windows: empty trial");
    std::vector<Window> out;
    for (std::size_t s = 0;; s += cfg.hop) {
        out.push_back({s, std::min(s + cfg.window_len, n), cfg.window_len});
        if (s + cfg.window_len >= n) break;
    }
    if (mode == WindowMode::Train) {
        for (std::size_t s = cfg.overlap_offset; s + cfg.window_len <= n; s += cfg.hop)
            out.push_back({s, s + cfg.window_len, cfg.window_len});
    }
    return out;
}

// ---- normalization ----

/// Per-dimension z-scoring statistics, fit on training folds only.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<std::uint8_t> zero_variance;  // flagged dims pass through centered only
};

inline NormStats compute_norm_stats(const std::vector<const Matrix*>& mats) {
    NormStats st;
    if (mats.empty() || mats[0]->cols == 0) return st;
    std::size_t d = mats[0]->cols;
    st.mean.assign(d, 0.0);
    st.stddev.assign(d, 0.0);
    st.zero_variance.assign(d, 0);
    std::size_t count = 0;
    for (const Matrix* m : mats) {
        for (std::size_t r = 0; r < m->rows; ++r)
            for (std::size_t c = 0; c < d; ++c) st.mean[c] += m->at(r, c);
        count += m->rows;
    }
    for (std::size_t c = 0; c < d; ++c) st.mean[c] /= double(count);
    for (const Matrix* m : mats)
        for (std::size_t r = 0; r < m->rows; ++r)
            for (std::size_t c = 0; c < d; ++c) {
                double dv = m->at(r, c) - st.mean[c];
                st.stddev[c] += dv * dv;
            }
    for (std::size_t c = 0; c < d; ++c) {
        st.stddev[c] = std::sqrt(st.stddev[c] / double(count));
        if (st.stddev[c] < 1e-12) {
            st.zero_variance[c] = 1;
            st.stddev[c] = 1.0;
        }
    }
    return st;
}

inline void apply_norm_stats(Matrix& m, const NormStats& st) {
    if (st.mean.empty()) return;
    if (m.cols != st.mean.size()) throw ShapeMismatch("apply_norm_stats: width mismatch");
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c)
            m.at(r, c) = float((m.at(r, c) - st.mean[c]) / st.stddev[c]);
}

/// Pixel map for visual data: [0,1] -> [-1,1] (mean = std = 0.5).
inline double normalize_pixel(double v) { return (v - 0.5) / 0.5; }

// ---- augmentation ----

/// Crops a window of stored 48x48x3 frames to 40x40x3. Train mode draws one
/// flip decision and one crop offset per window from the seed; eval mode is
/// the deterministic center crop (offset 4).
inline Matrix augment_visual(const Matrix& frames48, WindowMode mode, std::uint64_t seed) {
    if (frames48.cols != kFramePixels) throw ShapeMismatch("augment_visual: expected 48x48x3 rows");
    std::size_t margin = kImageSize - kCropSize;
    std::size_t ox = margin / 2, oy = margin / 2;
    bool flip = false;
    if (mode == WindowMode::Train) {
        std::mt19937_64 rng(seed);
        ox = std::uniform_int_distribution<std::size_t>(0, margin)(rng);
        oy = std::uniform_int_distribution<std::size_t>(0, margin)(rng);
        flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    }
    Matrix out;
    out.rows = frames48.rows;
    out.cols = 3 * kCropSize * kCropSize;
    out.values.resize(out.rows * out.cols);
    for (std::size_t r = 0; r < out.rows; ++r) {
        const float* src = frames48.values.data() + r * kFramePixels;
        float* dst = out.values.data() + r * out.cols;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < kCropSize; ++y)
                for (std::size_t x = 0; x < kCropSize; ++x) {
                    std::size_t sx = flip ? ox + (kCropSize - 1 - x) : ox + x;
                    dst[(c * kCropSize + y) * kCropSize + x] =
                        src[(c * kImageSize + y + oy) * kImageSize + sx];
                }
    }
    return out;
}

// ---- manifest and trials ----

struct ManifestEntry {
    std::string trial_id;
    std::string subject_id;
    std::string partition;  // "train" or "val"
    double fps = 30.0;
    std::filesystem::path frames_dir;
    std::filesystem::path annotation_path;
    std::filesystem::path audio_feat_path;
    std::filesystem::path wordspan_csv;
    std::filesystem::path wordfeat_path;
};

/// Relative paths in the manifest are resolved against its own directory, so
/// a generated corpus stays valid when the tree is moved.
inline std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    auto resolve = [base = path.parent_path()](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    std::vector<ManifestEntry> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = split_csv_line(lines[i]);
        if (f.size() != 9)
            throw MalformedRow("manifest row " + std::to_string(i + 1) + " needs 9 columns");
        ManifestEntry e;
        e.trial_id = f[0];
        e.subject_id = f[1];
        e.partition = f[2];
        e.fps = detail::parse_double_field(f[3], path.string());
        e.frames_dir = resolve(f[4]);
        e.annotation_path = resolve(f[5]);
        e.audio_feat_path = resolve(f[6]);
        e.wordspan_csv = resolve(f[7]);
        e.wordfeat_path = resolve(f[8]);
        out.push_back(std::move(e));
    }
    return out;
}

/// One annotated sequence with all modalities aligned to length N.
struct Trial {
    std::string trial_id;
    std::string subject_id;
    double fps = 30.0;
    std::vector<double> valence;
    std::vector<double> arousal;
    std::vector<std::size_t> frame_index_map;
    Matrix visual;  // N x (3*48*48), raw [0,1] pixels
    Matrix audio;   // N x d_a
    Matrix text;    // N x d_t

    std::size_t length() const { return valence.size(); }
};

/// Loads and aligns one trial: labels with sentinel exclusion, frame matrix
/// assembly, audio pad/trim, and word-span feature population.
inline Trial load_trial(const ManifestEntry& e) {
    Trial t;
    t.trial_id = e.trial_id;
    t.subject_id = e.subject_id;
    t.fps = e.fps;
    AnnotationResult ann = parse_annotations(e.annotation_path);
    t.valence = std::move(ann.valence);
    t.arousal = std::move(ann.arousal);
    t.frame_index_map = std::move(ann.frame_index_map);
    std::size_t n = t.valence.size();
    t.visual = assemble_visual(e.frames_dir, n, t.frame_index_map);
    t.audio = fit_length(read_aff1(e.audio_feat_path), n);
    auto spans = parse_word_spans(e.wordspan_csv);
    Matrix word_feats = read_aff1(e.wordfeat_path);
    t.text = populate_word_features(spans, word_feats, n, t.fps);
    return t;
}

}  // namespace ava
