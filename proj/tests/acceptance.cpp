// Acceptance gate: one PASS/FAIL line per criterion, exit code = failure count.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ava/config.hpp"
#include "ava/data.hpp"
#include "ava/folds.hpp"
#include "ava/io.hpp"
#include "ava/metrics.hpp"
#include "ava/model.hpp"
#include "ava/synth.hpp"
#include "ava/tensor.hpp"
#include "ava/train.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using ava::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << ": criterion " << idx << " — " << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

bool criterion_gradients(std::string& detail) {
    auto t0 = Clock::now();
    constexpr int kReps = 100;
    constexpr double kTol = 1e-4;
    double worst = 0.0;
    std::mt19937_64 rng(1001);
    auto squash = [](const Tensor& t) { return ava::mean_all(ava::mul(t, t)); };

    auto run = [&](auto f, std::vector<std::vector<std::size_t>> shapes, double scale = 0.5) {
        for (int rep = 0; rep < kReps; ++rep) {
            std::vector<Tensor> leaves;
            for (auto& s : shapes) leaves.push_back(testutil::random_tensor(s, rng, scale));
            worst = std::max(worst, testutil::grad_check(f, leaves));
        }
    };

    run([&](std::vector<Tensor>& l) {
        return squash(ava::add(ava::mul(l[0], l[1]), ava::mul_scalar(ava::add_scalar(l[0], 0.7), 1.3)));
    }, {{3, 4}, {3, 4}});
    run([&](std::vector<Tensor>& l) {
        for (double& v : l[0].data())
            if (std::abs(v) < 5e-3) v = 0.1;  // keep clear of the relu kink
        return squash(ava::relu(l[0]));
    }, {{4, 4}});
    run([&](std::vector<Tensor>& l) {
        return squash(ava::matmul(ava::transpose(ava::matmul(l[0], l[1])), l[0]));
    }, {{3, 5}, {5, 2}});
    run([&](std::vector<Tensor>& l) {
        return squash(ava::add_scalar(ava::softmax_rows(l[0]), 1.0));
    }, {{3, 6}}, 2.0);
    for (std::size_t dil : {1, 2, 3})
        run([&, dil](std::vector<Tensor>& l) {
            return squash(ava::conv1d_causal(l[0], l[1], dil));
        }, {{2, 9}, {3, 2, 3}});
    run([&](std::vector<Tensor>& l) {
        return squash(ava::global_avg_pool(ava::maxpool2(ava::conv2d(l[0], l[1]))));
    }, {{2, 2, 4, 4}, {3, 2, 3, 3}});
    run([&](std::vector<Tensor>& l) {
        Tensor c = ava::concat({l[0], l[1]}, 1);
        return squash(ava::reshape(ava::slice_rows(ava::slice_cols(c, 1, 4), 0, 2), {4, 2}));
    }, {{2, 3}, {2, 3}});
    run([&](std::vector<Tensor>& l) {
        Tensor aff = ava::affine(ava::layer_norm(l[0], l[1], l[2]), l[3], l[4]);
        return ava::add(ava::variance_all(aff), squash(ava::sub_bcast(aff, ava::mean_all(aff))));
    }, {{4, 3}, {3}, {3}, {3, 2}, {2}});
    {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (int rep = 0; rep < kReps; ++rep) {
            std::vector<Tensor> leaves{testutil::random_tensor({12}, rng)};
            std::vector<double> gold(12);
            for (double& v : gold) v = dist(rng);
            auto f = [gold](std::vector<Tensor>& l) { return ava::ccc_loss(l[0], gold); };
            worst = std::max(worst, testutil::grad_check(f, leaves));
        }
    }

    double secs = seconds_since(t0);
    char buf[128];
    std::snprintf(buf, sizeof buf, "worst rel err %.2e, %.1fs", worst, secs);
    detail = buf;
    return worst < kTol && secs < 120.0;
}

// ---------------------------------------------------------------- criterion 2

bool criterion_coattention(std::string& detail) {
    std::mt19937_64 rng(1002);
    double worst_oracle = 0.0, worst_decomp = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t n = 4 + rep % 5, d = 32;
        Tensor q = testutil::random_tensor({n, d}, rng, 1.0, false);
        Tensor k = testutil::random_tensor({n, d}, rng, 1.0, false);
        Tensor v = testutil::random_tensor({n, d}, rng, 1.0, false);
        Tensor out = ava::coattention_single(q, k, v, d);

        // Scalar triple-loop brute force of (softmax(QK^T/sqrt(dk)) + 1) V.
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> scores(n, 0.0);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < d; ++c)
                    scores[j] += q(i, c) * k(j, c) / std::sqrt(double(d));
            double mx = *std::max_element(scores.begin(), scores.end()), z = 0.0;
            for (double& s : scores) z += (s = std::exp(s - mx));
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += (scores[j] / z + 1.0) * v(j, c);
                worst_oracle = std::max(worst_oracle, std::abs(out(i, c) - acc));
            }
        }

        // Decomposition: coattention == standard attention + colsum broadcast.
        Tensor standard = ava::matmul(
            ava::softmax_rows(
                ava::mul_scalar(ava::matmul(q, ava::transpose(k)), 1.0 / std::sqrt(double(d)))),
            v);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                double colsum = 0.0;
                for (std::size_t j = 0; j < n; ++j) colsum += v(j, c);
                worst_decomp =
                    std::max(worst_decomp, std::abs(out(i, c) - standard(i, c) - colsum));
            }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "oracle err %.2e, decomposition err %.2e", worst_oracle,
                  worst_decomp);
    detail = buf;
    return worst_oracle < 1e-10 && worst_decomp < 1e-10;
}

// ---------------------------------------------------------------- criterion 3

double ccc_double_loop(const std::vector<double>& x, const std::vector<double>& y) {
    double n = double(x.size()), mx = 0.0, my = 0.0;
    for (double v : x) mx += v / n;
    for (double v : y) my += v / n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) {
            vx += (x[i] - x[j]) * (x[i] - x[j]) / (2.0 * n * n);
            vy += (y[i] - y[j]) * (y[i] - y[j]) / (2.0 * n * n);
            cov += (x[i] - x[j]) * (y[i] - y[j]) / (2.0 * n * n);
        }
    return 2.0 * cov / (vx + vy + (mx - my) * (mx - my));
}

bool criterion_ccc(std::string& detail) {
    std::mt19937_64 rng(1003);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        std::size_t n = 5 + rep % 46;
        std::vector<double> x(n), y(n);
        for (double& v : x) v = dist(rng);
        for (double& v : y) v = dist(rng);
        worst = std::max(worst, std::abs(ava::ccc(x, y) - ccc_double_loop(x, y)));
    }
    double worst_shift = 0.0;
    for (double a : {0.1, 0.5, 1.0, 2.0}) {
        std::vector<double> x(300), y;
        for (double& v : x) v = dist(rng);
        y = x;
        for (double& v : y) v += a;
        double mx = 0.0, var = 0.0;
        for (double v : x) mx += v / 300.0;
        for (double v : x) var += (v - mx) * (v - mx) / 300.0;
        worst_shift =
            std::max(worst_shift, std::abs(ava::ccc(x, y) - 2.0 * var / (2.0 * var + a * a)));
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "reference err %.2e, shift identity err %.2e", worst, worst_shift);
    detail = buf;
    return worst < 1e-10 && worst_shift < 1e-12;
}

// ---------------------------------------------------------------- criterion 4

bool criterion_alignment(std::string& detail) {
    // fit_length against the explicit index rule.
    for (std::size_t m = 1; m <= 400; ++m) {
        ava::Matrix feat;
        feat.rows = m;
        feat.cols = 1;
        feat.values.resize(m);
        for (std::size_t i = 0; i < m; ++i) feat.values[i] = float(i);
        for (std::size_t n : {std::size_t(1), m / 2 + 1, m, m + 3, std::size_t(400)}) {
            ava::Matrix out = ava::fit_length(feat, n);
            for (std::size_t i = 0; i < n; ++i)
                if (out.values[i] != float(std::min(i, m - 1))) {
                    detail = "fit_length mismatch at m=" + std::to_string(m);
                    return false;
                }
        }
    }

    // parse_annotations against an independent enumeration of kept rows.
    fs::path ann = fs::temp_directory_path() / "ava_acc_ann.csv";
    for (std::size_t n = 1; n <= 400; ++n) {
        std::vector<int> sentinel(n, 0);
        for (std::size_t i = 0; i + 1 < n; ++i) sentinel[i] = (i * 2654435761u) % 7 == 0;
        {
            std::ofstream os(ann);
            os << "valence,arousal\n";
            for (std::size_t i = 0; i < n; ++i) {
                if (sentinel[i])
                    os << (i % 2 ? "-5,0.1\n" : "0.1,-5\n");
                else
                    os << "0." << (i % 9 + 1) << ",0." << (i % 7 + 1) << "\n";
            }
        }
        ava::AnnotationResult r = ava::parse_annotations(ann);
        std::vector<std::size_t> expected;
        for (std::size_t i = 0; i < n; ++i)
            if (!sentinel[i]) expected.push_back(i);
        if (r.frame_index_map != expected || r.valence.size() != expected.size()) {
            detail = "parse_annotations mismatch at n=" + std::to_string(n);
            return false;
        }
    }
    fs::remove(ann);

    // populate_word_features against a direct per-frame span scan.
    for (std::size_t n = 1; n <= 400; ++n) {
        std::size_t m = n % 5 + 1;
        std::vector<ava::WordSpan> spans;
        ava::Matrix feats;
        feats.rows = m;
        feats.cols = 1;
        feats.values.resize(m);
        for (std::size_t k = 0; k < m; ++k) {
            spans.push_back({"w", 0.4 * double(k), 0.4 * double(k) + 0.3});
            feats.values[k] = float(k + 1);
        }
        ava::Matrix out = ava::populate_word_features(spans, feats, n, 10.0);
        for (std::size_t i = 0; i < n; ++i) {
            double t = double(i) / 10.0;
            float expect = 0.0f;
            for (std::size_t k = 0; k < m; ++k)
                if (spans[k].start_s <= t && t < spans[k].end_s) expect = feats.values[k];
            if (out.values[i] != expect) {
                detail = "populate_word_features mismatch at n=" + std::to_string(n);
                return false;
            }
        }
    }

    // make_windows against an independent enumeration; coverage and overlap.
    ava::WindowConfig wcfg;
    for (std::size_t n = 1; n <= 400; ++n) {
        auto ws = ava::make_windows(n, wcfg, ava::WindowMode::Eval);
        std::vector<std::size_t> starts;
        for (std::size_t s = 0;; s += 200) {
            starts.push_back(s);
            if (s + 300 >= n) break;
        }
        if (ws.size() != starts.size()) {
            detail = "make_windows count mismatch at n=" + std::to_string(n);
            return false;
        }
        std::vector<int> covered(n, 0);
        for (std::size_t i = 0; i < ws.size(); ++i) {
            if (ws[i].start != starts[i] || ws[i].end != std::min(starts[i] + 300, n) ||
                ws[i].len != 300) {
                detail = "make_windows geometry mismatch at n=" + std::to_string(n);
                return false;
            }
            for (std::size_t f = ws[i].start; f < ws[i].end; ++f) covered[f] = 1;
        }
        for (std::size_t f = 0; f < n; ++f)
            if (!covered[f]) {
                detail = "uncovered frame at n=" + std::to_string(n);
                return false;
            }
        // Consecutive windows share exactly 100 frames once trials exceed one
        // window (the second window may be tail-clamped, never below 100).
        for (std::size_t i = 0; i + 1 < ws.size(); ++i) {
            std::size_t overlap = ws[i].end - ws[i + 1].start;
            if (n >= 300 && ws[i].end == ws[i].start + 300 && overlap != 100) {
                detail = "overlap mismatch at n=" + std::to_string(n);
                return false;
            }
        }
        // Train mode adds exactly the offset-100 full windows.
        auto train_ws = ava::make_windows(n, wcfg, ava::WindowMode::Train);
        std::size_t extra = 0;
        for (std::size_t s = 100; s + 300 <= n; s += 200) ++extra;
        if (train_ws.size() != ws.size() + extra) {
            detail = "train window count mismatch at n=" + std::to_string(n);
            return false;
        }
    }
    detail = "exhaustive N in [1,400]";
    return true;
}

// ---------------------------------------------------------------- criterion 5

bool criterion_folds(std::string& detail) {
    // 341 training trials: 150 subjects with 2 trials, 41 subjects with 1;
    // 71 validation trials across 71 further subjects.
    std::vector<ava::ManifestEntry> manifest;
    auto add = [&](const std::string& subj, std::size_t count, const std::string& part) {
        for (std::size_t t = 0; t < count; ++t) {
            ava::ManifestEntry e;
            e.subject_id = subj;
            e.trial_id = subj + "_t" + std::to_string(t);
            e.partition = part;
            manifest.push_back(std::move(e));
        }
    };
    for (std::size_t s = 0; s < 150; ++s) add("tr" + std::to_string(s), 2, "train");
    for (std::size_t s = 150; s < 191; ++s) add("tr" + std::to_string(s), 1, "train");
    for (std::size_t s = 0; s < 71; ++s) add("va" + std::to_string(s), 1, "val");

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ava::FoldPlan plan = ava::make_folds(manifest, seed);
        std::multiset<std::size_t> sizes;
        for (std::size_t f = 1; f < 6; ++f) sizes.insert(plan.folds[f].size());
        if (plan.folds[0].size() != 71 || sizes != std::multiset<std::size_t>{68, 68, 68, 68, 69}) {
            std::ostringstream os;
            os << "seed " << seed << " sizes " << plan.folds[0].size();
            for (std::size_t f = 1; f < 6; ++f) os << "," << plan.folds[f].size();
            detail = os.str();
            return false;
        }
        std::set<std::string> seen;
        std::map<std::string, std::set<std::size_t>> subject_folds;
        for (std::size_t f = 0; f < 6; ++f)
            for (const auto& id : plan.folds[f]) {
                if (!seen.insert(id).second) {
                    detail = "duplicate trial " + id;
                    return false;
                }
                subject_folds[id.substr(0, id.find('_'))].insert(f);
            }
        if (seen.size() != manifest.size()) {
            detail = "coverage gap";
            return false;
        }
        for (const auto& [subj, folds] : subject_folds)
            if (folds.size() != 1) {
                detail = "subject " + subj + " split across folds";
                return false;
            }
    }
    detail = "sizes {68,68,68,68,69,71} across 10 seeds";
    return true;
}

// ---------------------------------------------------------------- criterion 6

bool criterion_centering(std::string& detail) {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(9000 + seed);
        std::size_t n = 600;
        std::vector<double> truth(n);
        std::uniform_real_distribution<double> freq(0.01, 0.05), phase(0.0, 6.28);
        double f1 = freq(rng), f2 = freq(rng), p1 = phase(rng), p2 = phase(rng);
        for (std::size_t i = 0; i < n; ++i)
            truth[i] = 0.5 * std::sin(f1 * double(i) + p1) + 0.3 * std::sin(f2 * double(i) + p2);

        ava::RaterSet raters(6, truth);
        std::normal_distribution<double> noise(0.0, 0.3);
        std::uniform_real_distribution<double> offset(-0.5, 0.5);
        for (auto& r : raters) {
            double off = offset(rng);
            for (double& v : r) v += off + noise(rng);
        }
        auto merged = ava::ccc_center(raters);
        double merged_ccc = ava::ccc(merged, truth), avg = 0.0;
        for (const auto& r : raters) avg += ava::ccc(r, truth) / 6.0;
        if (merged_ccc > avg) ++wins;

        ava::RaterSet permuted{raters[5], raters[2], raters[0], raters[4], raters[1], raters[3]};
        auto merged_p = ava::ccc_center(permuted);
        for (std::size_t i = 0; i < n; ++i)
            if (std::abs(merged[i] - merged_p[i]) > 1e-12) {
                detail = "permutation variance at seed " + std::to_string(seed);
                return false;
            }
    }
    detail = "merged beats average rater in " + std::to_string(wins) + "/20 seeds";
    return wins >= 18;
}

// ---------------------------------------------------------------- criterion 7

ava::ModelConfig acceptance_model(std::size_t d_a, std::size_t d_t) {
    ava::ModelConfig cfg;
    cfg.backbone.stage_channels = {4, 6, 12};
    cfg.backbone.d_v = 12;
    for (ava::BranchConfig* b : {&cfg.visual_tcn, &cfg.audio_tcn, &cfg.text_tcn}) {
        b->tcn_channels = {8, 8};
        b->dilations = {1, 2};
        b->output_dim = 12;
        b->dropout_rate = 0.0;
    }
    cfg.d_k = 8;
    cfg.seed = 7;
    cfg.finalize(d_a, d_t);
    return cfg;
}

bool criterion_convergence(std::string& detail) {
    auto t0 = Clock::now();
    fs::path root = fs::temp_directory_path() / "ava_acceptance_synth";
    fs::remove_all(root);

    ava::SynthSpec spec;
    spec.n_subjects = 12;
    spec.trials_per_subject = 2;
    spec.frames_per_trial = 900;
    spec.signal_to_noise = 4.0;
    spec.seed = 17;
    spec.d_audio = 24;
    spec.d_text = 16;

    double best = 0.0;
    std::size_t epochs = 0;
    {
        auto manifest = ava::generate_synth(spec, root / "good");
        std::vector<ava::Trial> trials;
        for (const auto& e : manifest) trials.push_back(ava::load_trial(e));
        ava::FoldPlan plan = ava::make_folds(manifest, 3);

        ava::TrainConfig cfg;
        cfg.lr = 2e-3;
        // min_lr above factor*lr: a plateau advances straight to the next
        // unfreeze stage at full rate instead of crawling at a decayed one.
        cfg.min_lr = 3e-4;
        cfg.warmup_epochs = 2;
        cfg.max_epochs = 50;
        cfg.window_len = 150;  // shorter windows: more updates per epoch
        cfg.hop = 100;
        cfg.plateau_patience = 5;
        cfg.early_stop_patience = 15;
        cfg.unfreeze_stages = {"backbone.stage3", "backbone.stage2", "backbone.stage1"};
        cfg.seed = 1;
        ava::ModelConfig mcfg = acceptance_model(spec.d_audio, spec.d_text);
        ava::TrainResult res = ava::train_fold(trials, plan, 1, cfg, mcfg, {}, &std::cout);
        best = res.best_val_ccc;
        epochs = res.log.size();
    }
    fs::remove_all(root / "good");

    // Low-signal run: the schedule must show a plateau decay and an unfreeze.
    bool saw_decay = false, saw_unfreeze = false;
    {
        spec.signal_to_noise = 0.02;
        spec.seed = 18;
        auto manifest = ava::generate_synth(spec, root / "stalled");
        std::vector<ava::Trial> trials;
        for (const auto& e : manifest) trials.push_back(ava::load_trial(e));
        ava::FoldPlan plan = ava::make_folds(manifest, 3);

        ava::TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.min_lr = 2e-5;
        cfg.warmup_epochs = 1;
        cfg.max_epochs = 30;
        cfg.plateau_patience = 2;
        cfg.early_stop_patience = 10;
        cfg.improve_eps = 0.05;  // noise-level fluctuations do not count
        cfg.seed = 2;
        ava::ModelConfig mcfg = acceptance_model(spec.d_audio, spec.d_text);
        ava::TrainResult res = ava::train_fold(trials, plan, 1, cfg, mcfg, {}, &std::cout);
        for (const auto& el : res.log) {
            if (el.event.find("plateau_decay") != std::string::npos) saw_decay = true;
            if (el.event.find("unfreeze:") != std::string::npos) saw_unfreeze = true;
        }
    }
    fs::remove_all(root);

    double secs = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "best val CCC %.3f in %zu epochs, decay=%d unfreeze=%d, %.0fs total", best,
                  epochs, int(saw_decay), int(saw_unfreeze), secs);
    detail = buf;
    return best >= 0.8 && epochs <= 50 && saw_decay && saw_unfreeze && secs < 900.0;
}

// ---------------------------------------------------------------- criterion 8

bool criterion_schedule(std::string& detail) {
    ava::TrainConfig cfg;  // spec defaults: lr 1e-5, warmup 10, patience 5, factor 0.1
    std::mt19937_64 rng(1008);
    std::bernoulli_distribution improve(0.3);
    for (int seq = 0; seq < 10; ++seq) {
        ava::SchedulerState st;
        double ref_lr = 0.0;
        std::size_t ref_epoch = 0, ref_streak = 0, ref_unfrozen = 0;
        bool ref_stopped = false;
        for (int e = 0; e < 100; ++e) {
            bool improved = improve(rng);
            ava::SchedulerEvent ev = ava::scheduler_step(st, cfg, improved);

            ava::SchedulerEvent ref_ev = ava::SchedulerEvent::None;
            if (!ref_stopped) {
                ref_epoch += 1;
                if (ref_epoch <= cfg.warmup_epochs) {
                    ref_lr = (double(ref_epoch) / double(cfg.warmup_epochs)) * cfg.lr;
                    ref_streak = 0;
                } else if (improved) {
                    ref_streak = 0;
                } else if (++ref_streak == cfg.plateau_patience) {
                    ref_streak = 0;
                    ref_lr *= cfg.plateau_factor;
                    if (ref_lr < cfg.min_lr) {
                        if (ref_unfrozen < cfg.unfreeze_stages.size()) {
                            ++ref_unfrozen;
                            ref_lr = cfg.lr;
                            ref_ev = ava::SchedulerEvent::Unfreeze;
                        } else {
                            ref_ev = ava::SchedulerEvent::Stop;
                            ref_stopped = true;
                        }
                    }
                }
            }
            if (ref_stopped && ref_ev != ava::SchedulerEvent::Stop) break;
            if (st.current_lr != ref_lr || ev != ref_ev) {
                detail = "divergence in sequence " + std::to_string(seq) + " at epoch " +
                         std::to_string(e + 1);
                return false;
            }
            // Warmup values: lr(e) = e * 1e-6 for e in [1, 10].
            if (e < 10 && std::abs(st.current_lr - double(e + 1) * 1e-6) > 1e-17) {
                detail = "warmup value mismatch at epoch " + std::to_string(e + 1);
                return false;
            }
            if (ev == ava::SchedulerEvent::Stop) break;
        }
    }
    detail = "10 sequences bit-identical";
    return true;
}

// ---------------------------------------------------------------- criterion 9

bool criterion_serialization(std::string& detail) {
    fs::path dir = fs::temp_directory_path() / "ava_acceptance_io";
    fs::remove_all(dir);
    fs::create_directories(dir);
    bool ok = true;
    std::string why;

    std::mt19937_64 rng(1009);
    ava::Matrix m;
    m.rows = 31;
    m.cols = 7;
    m.values.resize(31 * 7);
    std::uniform_real_distribution<float> fdist(-50.0f, 50.0f);
    for (auto& v : m.values) v = fdist(rng);
    ava::write_aff1(dir / "m.aff1", m);
    ava::Matrix mr = ava::read_aff1(dir / "m.aff1");
    if (mr.rows != m.rows || mr.cols != m.cols || mr.values != m.values) {
        ok = false;
        why = "aff1 round trip drift";
    }

    std::vector<ava::ParamRecord> params(2);
    params[0] = {"a.w", {3, 4}, std::vector<double>(12)};
    params[1] = {"b.b", {5}, std::vector<double>(5)};
    std::uniform_real_distribution<double> ddist(-1.0, 1.0);
    for (auto& p : params)
        for (auto& v : p.values) v = ddist(rng);
    ava::write_checkpoint(dir / "c.ckpt", params);
    auto pr = ava::read_checkpoint(dir / "c.ckpt");
    if (pr.size() != 2 || pr[0].name != "a.w" || pr[0].dims != params[0].dims ||
        pr[0].values != params[0].values || pr[1].values != params[1].values) {
        ok = false;
        why = "checkpoint round trip drift";
    }

    auto expect = [&](auto fn, const char* what) {
        try {
            fn();
            ok = false;
            why = std::string("missing error: ") + what;
        } catch (const ava::ValidationError&) {
        }
    };
    {
        std::ofstream os(dir / "bad_magic.aff1", std::ios::binary);
        os << "XXXX";
        os.write("\x01\x00\x00\x00\x01\x00\x00\x00", 8);
    }
    expect([&] { ava::read_aff1(dir / "bad_magic.aff1"); }, "aff1 bad magic");
    {
        std::ofstream os(dir / "trunc.aff1", std::ios::binary);
        os << "AFF1";
        os.write("\x02\x00\x00\x00\x02\x00\x00\x00", 8);
        os.write("\x00\x00\x00\x00", 4);  // one float, four declared
    }
    expect([&] { ava::read_aff1(dir / "trunc.aff1"); }, "aff1 truncation");
    {
        std::ofstream os(dir / "bad_magic.ckpt", std::ios::binary);
        os << "YYYY";
        os.write("\x01\x00", 2);
    }
    expect([&] { ava::read_checkpoint(dir / "bad_magic.ckpt"); }, "checkpoint bad magic");
    {
        std::ofstream os(dir / "trunc.ckpt", std::ios::binary);
        os << "AFWT";
        os.write("\x01\x00", 2);
        os.write("\x08\x00", 2);
        os << "abc";
    }
    expect([&] { ava::read_checkpoint(dir / "trunc.ckpt"); }, "checkpoint truncation");

    fs::remove_all(dir);
    detail = ok ? "round trips bit-exact, errors surfaced" : why;
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    // Optional argument: run a single criterion by number (debugging aid).
    int only = argc > 1 ? std::atoi(argv[1]) : 0;
    auto want = [only](int idx) { return only == 0 || only == idx; };
    std::string d;
    if (want(1))
    report(1, "gradient suite (100 instances/op, rel err < 1e-4, < 2 min)",
           criterion_gradients(d), d);
    if (want(2))
    report(2, "co-attention matches brute-force Eq. 1 oracle and decomposition",
           criterion_coattention(d), d);
    if (want(3))
    report(3, "CCC matches independent double-loop reference and shift identity",
           criterion_ccc(d), d);
    if (want(4))
    report(4, "alignment ops match exhaustive reference enumerations", criterion_alignment(d), d);
    if (want(5))
    report(5, "fold planner: sizes, coverage, subject independence", criterion_folds(d), d);
    if (want(6))
    report(6, "CCC-centering beats average rater and is permutation invariant",
           criterion_centering(d), d);
    if (want(7))
    report(7, "end-to-end convergence and stalled-schedule events", criterion_convergence(d), d);
    if (want(8))
    report(8, "scheduler trace bit-identical to pure reference", criterion_schedule(d), d);
    if (want(9))
    report(9, "serialization round trips and error surfacing", criterion_serialization(d), d);
    return g_failures;
}
