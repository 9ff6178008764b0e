#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ava/config.hpp"
#include "ava/data.hpp"
#include "ava/errors.hpp"
#include "ava/io.hpp"

namespace ava {

/// Deterministic synthetic corpus: smooth latent valence/arousal curves and
/// three modalities that carry the latent through fixed random linear maps
/// plus noise at signal_to_noise.
struct SynthSpec {
    std::size_t n_subjects = 12;
    std::size_t trials_per_subject = 2;
    std::size_t frames_per_trial = 900;
    double signal_to_noise = 4.0;
    std::uint64_t seed = 1;

    double fps = 30.0;
    std::size_t d_audio = 128;
    std::size_t d_text = 768;
    double sentinel_rate = 0.05;
    std::size_t val_subjects = 2;  // last subjects become the "val" partition

    void validate() const {
        if (n_subjects == 0 || trials_per_subject == 0 || frames_per_trial == 0 ||
            signal_to_noise <= 0.0 || fps <= 0.0 || d_audio == 0 || d_text == 0)
            throw ValidationError("SynthSpec: all quantities must be positive");
        if (val_subjects >= n_subjects)
            throw ValidationError("SynthSpec: val_subjects must leave training subjects");
    }

    static SynthSpec from_toml(const TomlTable& t) {
        SynthSpec s;
        s.n_subjects = std::size_t(t.integer("n_subjects", long(s.n_subjects)));
        s.trials_per_subject = std::size_t(t.integer("trials_per_subject", long(s.trials_per_subject)));
        s.frames_per_trial = std::size_t(t.integer("frames_per_trial", long(s.frames_per_trial)));
        s.signal_to_noise = t.number("signal_to_noise", s.signal_to_noise);
        s.seed = std::uint64_t(t.integer("seed", long(s.seed)));
        s.fps = t.number("fps", s.fps);
        s.d_audio = std::size_t(t.integer("d_audio", long(s.d_audio)));
        s.d_text = std::size_t(t.integer("d_text", long(s.d_text)));
        s.sentinel_rate = t.number("sentinel_rate", s.sentinel_rate);
        s.val_subjects = std::size_t(t.integer("val_subjects", long(s.val_subjects)));
        s.validate();
        return s;
    }
};

namespace detail {

/// Sum of a few seeded low-frequency sines, clipped to [-1, 1].
inline std::vector<double> smooth_latent(std::size_t n, double fps, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> freq(0.02, 0.25);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> amp(0.15, 0.45);
    struct Component {
        double f, p, a;
    };
    std::vector<Component> comps(3);
    for (auto& c : comps) c = {freq(rng), phase(rng), amp(rng)};
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t = double(i) / fps;
        double v = 0.0;
        for (const auto& c : comps) v += c.a * std::sin(2.0 * std::numbers::pi * c.f * t + c.p);
        out[i] = std::clamp(v, -1.0, 1.0);
    }
    return out;
}

/// signal + N(0, rms(signal)/snr) noise.
inline void add_noise(std::vector<float>& values, double snr, std::mt19937_64& rng) {
    double rms = 0.0;
    for (float v : values) rms += double(v) * v;
    rms = std::sqrt(rms / double(values.size()));
    std::normal_distribution<double> noise(0.0, rms / snr + 1e-12);
    for (float& v : values) v = float(v + noise(rng));
}

}  // namespace detail

/// Writes the synthetic corpus under out_dir and returns the manifest rows.
/// The same spec always produces a byte-identical tree.
inline std::vector<ManifestEntry> generate_synth(const SynthSpec& spec,
                                                 const std::filesystem::path& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    // Fixed per-dataset linear maps latent [v, a] -> feature space.
    std::mt19937_64 map_rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> w_audio(spec.d_audio * 2), w_text(spec.d_text * 2),
        w_visual(kFramePixels * 2);
    for (double& v : w_audio) v = unit(map_rng);
    for (double& v : w_text) v = unit(map_rng);
    // The visual map uses smooth low-frequency spatial fields (sums of random
    // 2-D cosines) instead of spatially white weights: like real imagery, the
    // signal is dominated by low spatial frequencies, which keeps it
    // recoverable by a convolutional encoder.
    {
        std::uniform_real_distribution<double> freq(0.5, 3.0);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        std::uniform_real_distribution<double> amp(0.5, 1.0);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t l = 0; l < 2; ++l) {
                struct Wave {
                    double fx, fy, ph, a;
                };
                Wave waves[4];
                for (Wave& wv : waves) wv = {freq(map_rng), freq(map_rng), phase(map_rng), amp(map_rng)};
                std::vector<double> field(kImageSize * kImageSize, 0.0);
                double mean = 0.0;
                for (std::size_t y = 0; y < kImageSize; ++y)
                    for (std::size_t x = 0; x < kImageSize; ++x) {
                        double v = 0.0;
                        for (const Wave& wv : waves)
                            v += wv.a * std::cos(2.0 * std::numbers::pi *
                                                     (wv.fx * double(x) + wv.fy * double(y)) /
                                                     double(kImageSize) +
                                                 wv.ph);
                        field[y * kImageSize + x] = v;
                        mean += v;
                    }
                mean /= double(field.size());
                double var = 0.0;
                for (double v : field) var += (v - mean) * (v - mean);
                double sd = std::sqrt(var / double(field.size())) + 1e-12;
                for (std::size_t p = 0; p < field.size(); ++p)
                    w_visual[(ch * kImageSize * kImageSize + p) * 2 + l] =
                        0.15 * (field[p] - mean) / sd;
            }
        }
    }

    std::vector<ManifestEntry> manifest;
    std::mt19937_64 rng(spec.seed);
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        char sid[16];
        std::snprintf(sid, sizeof sid, "S%03zu", s);
        bool is_val = s >= spec.n_subjects - spec.val_subjects;
        for (std::size_t tr = 0; tr < spec.trials_per_subject; ++tr) {
            std::string trial_id = std::string(sid) + "_T" + std::to_string(tr);
            fs::path tdir = out_dir / "trials" / trial_id;
            fs::create_directories(tdir / "frames");

            std::size_t n = spec.frames_per_trial;
            std::vector<double> valence = detail::smooth_latent(n, spec.fps, rng);
            std::vector<double> arousal = detail::smooth_latent(n, spec.fps, rng);

            // Annotations with seeded -5 sentinel rows.
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            std::vector<bool> sentinel(n);
            for (std::size_t i = 0; i < n; ++i) sentinel[i] = u01(rng) < spec.sentinel_rate;
            {
                std::ofstream os(tdir / "annotation.csv");
                if (!os) throw IoError("cannot write annotation for " + trial_id);
                os << "valence,arousal\n";
                char buf[64];
                for (std::size_t i = 0; i < n; ++i) {
                    if (sentinel[i]) {
                        os << "-5,-5\n";
                    } else {
                        std::snprintf(buf, sizeof buf, "%.6f,%.6f", valence[i], arousal[i]);
                        os << buf << "\n";
                    }
                }
            }

            // Frame files for non-sentinel frames; a small seeded fraction is
            // left missing to exercise the zero-fill path.
            for (std::size_t i = 0; i < n; ++i) {
                if (sentinel[i]) continue;
                if (u01(rng) < 0.01) continue;
                Matrix frame;
                frame.rows = 3;
                frame.cols = kImageSize * kImageSize;
                frame.values.resize(kFramePixels);
                // Noise scales with the mapped latent signal, not the 0.5 DC
                // level, so signal_to_noise means the same thing per modality.
                std::vector<float> sig(kFramePixels);
                for (std::size_t p = 0; p < kFramePixels; ++p)
                    sig[p] =
                        float(w_visual[p * 2] * valence[i] + w_visual[p * 2 + 1] * arousal[i]);
                detail::add_noise(sig, spec.signal_to_noise, rng);
                for (std::size_t p = 0; p < kFramePixels; ++p)
                    frame.values[p] = std::clamp(0.5f + sig[p], 0.0f, 1.0f);
                write_aff1(tdir / "frames" / frame_file_name(i), frame);
            }

            // Audio features, deliberately a few rows off to exercise pad/trim.
            {
                std::uniform_int_distribution<int> jitter(-3, 3);
                std::size_t m = std::size_t(std::max<long>(1, long(n) + jitter(rng)));
                Matrix audio;
                audio.rows = m;
                audio.cols = spec.d_audio;
                audio.values.resize(m * spec.d_audio);
                for (std::size_t i = 0; i < m; ++i) {
                    std::size_t li = std::min(i, n - 1);
                    for (std::size_t c = 0; c < spec.d_audio; ++c)
                        audio.values[i * spec.d_audio + c] = float(
                            w_audio[c * 2] * valence[li] + w_audio[c * 2 + 1] * arousal[li]);
                }
                detail::add_noise(audio.values, spec.signal_to_noise, rng);
                write_aff1(tdir / "audio.aff1", audio);
            }

            // Word spans covering the trial with small gaps.
            {
                std::uniform_real_distribution<double> wlen(0.3, 1.2), gap(0.0, 0.2);
                std::vector<WordSpan> spans;
                double cur = gap(rng);
                double dur = double(n) / spec.fps;
                std::size_t word = 0;
                while (cur < dur) {
                    double end = std::min(cur + wlen(rng), dur + 0.5);
                    spans.push_back({"w" + std::to_string(word++), cur, end});
                    cur = end + gap(rng);
                }
                std::ofstream os(tdir / "words.csv");
                if (!os) throw IoError("cannot write word spans for " + trial_id);
                os << "word,start_s,end_s\n";
                char buf[96];
                for (const auto& sp : spans) {
                    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f", sp.word.c_str(), sp.start_s,
                                  sp.end_s);
                    os << buf << "\n";
                }
                Matrix wf;
                wf.rows = spans.size();
                wf.cols = spec.d_text;
                wf.values.resize(wf.rows * wf.cols);
                for (std::size_t i = 0; i < spans.size(); ++i) {
                    std::size_t f0 = std::min(n - 1, std::size_t(spans[i].start_s * spec.fps));
                    std::size_t f1 = std::min(n, std::size_t(spans[i].end_s * spec.fps) + 1);
                    double mv = 0.0, ma = 0.0;
                    for (std::size_t f = f0; f < f1; ++f) {
                        mv += valence[f];
                        ma += arousal[f];
                    }
                    mv /= double(f1 - f0);
                    ma /= double(f1 - f0);
                    for (std::size_t c = 0; c < spec.d_text; ++c)
                        wf.values[i * spec.d_text + c] =
                            float(w_text[c * 2] * mv + w_text[c * 2 + 1] * ma);
                }
                detail::add_noise(wf.values, spec.signal_to_noise, rng);
                write_aff1(tdir / "wordfeats.aff1", wf);
            }

            ManifestEntry e;
            e.trial_id = trial_id;
            e.subject_id = sid;
            e.partition = is_val ? "val" : "train";
            e.fps = spec.fps;
            e.frames_dir = tdir / "frames";
            e.annotation_path = tdir / "annotation.csv";
            e.audio_feat_path = tdir / "audio.aff1";
            e.wordspan_csv = tdir / "words.csv";
            e.wordfeat_path = tdir / "wordfeats.aff1";
            manifest.push_back(std::move(e));
        }
    }

    std::ofstream os(out_dir / "manifest.csv");
    if (!os) throw IoError("cannot write manifest");
    os << "trial_id,subject_id,partition,fps,frames_dir,annotation_path,audio_feat_path,"
          "wordspan_csv,wordfeat_path\n";
    // Paths are written relative to the manifest so the tree is relocatable
    // and byte-identical for a given spec regardless of out_dir.
    for (const auto& e : manifest) {
        char fps_buf[32];
        std::snprintf(fps_buf, sizeof fps_buf, "%g", e.fps);
        auto rel = [&](const fs::path& p) { return fs::relative(p, out_dir).generic_string(); };
        os << e.trial_id << "," << e.subject_id << "," << e.partition << "," << fps_buf << ","
           << rel(e.frames_dir) << "," << rel(e.annotation_path) << ","
           << rel(e.audio_feat_path) << "," << rel(e.wordspan_csv) << ","
           << rel(e.wordfeat_path) << "\n";
    }
    return manifest;
}

}  // namespace ava
