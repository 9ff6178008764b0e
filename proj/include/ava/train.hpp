#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ava/config.hpp"
#include "ava/data.hpp"
#include "ava/errors.hpp"
#include "ava/folds.hpp"
#include "ava/io.hpp"
#include "ava/metrics.hpp"
#include "ava/model.hpp"

namespace ava {

// ---- configuration ----

struct TrainConfig {
    std::size_t batch_size = 2;
    std::size_t window_len = 300;
    std::size_t hop = 200;
    double lr = 1e-5;
    double min_lr = 1e-7;
    double weight_decay = 0.001;
    std::size_t plateau_patience = 5;
    double plateau_factor = 0.1;
    std::size_t warmup_epochs = 10;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 10;
    std::vector<std::string> unfreeze_stages{"backbone.stage3", "backbone.stage2"};
    std::uint64_t seed = 0;
    bool global_val_ccc = false;  // false: per-trial CCC averaged over trials
    double improve_eps = 1e-5;

    void validate() const {
        if (min_lr >= lr) throw ValidationError("TrainConfig: min_lr must be below lr");
        if (batch_size == 0 || window_len == 0 || hop == 0 || hop > window_len ||
            max_epochs == 0 || warmup_epochs == 0 || plateau_patience == 0 ||
            early_stop_patience == 0)
            throw ValidationError("TrainConfig: counts must be positive and hop <= window_len");
    }

    static TrainConfig from_toml(const TomlTable& t) {
        TrainConfig c;
        c.batch_size = std::size_t(t.integer("batch_size", long(c.batch_size)));
        c.window_len = std::size_t(t.integer("window_len", long(c.window_len)));
        c.hop = std::size_t(t.integer("hop", long(c.hop)));
        c.lr = t.number("lr", c.lr);
        c.min_lr = t.number("min_lr", c.min_lr);
        c.weight_decay = t.number("weight_decay", c.weight_decay);
        c.plateau_patience = std::size_t(t.integer("plateau_patience", long(c.plateau_patience)));
        c.plateau_factor = t.number("plateau_factor", c.plateau_factor);
        c.warmup_epochs = std::size_t(t.integer("warmup_epochs", long(c.warmup_epochs)));
        c.max_epochs = std::size_t(t.integer("max_epochs", long(c.max_epochs)));
        c.early_stop_patience =
            std::size_t(t.integer("early_stop_patience", long(c.early_stop_patience)));
        c.unfreeze_stages = t.string_array("unfreeze_stages", c.unfreeze_stages);
        c.seed = std::uint64_t(t.integer("seed", long(c.seed)));
        c.global_val_ccc = t.boolean("global_val_ccc", c.global_val_ccc);
        c.validate();
        return c;
    }
};

/// Model hyperparameters read from the same TOML as the schedule.
inline ModelConfig model_config_from_toml(const TomlTable& t) {
    ModelConfig m;
    m.d_k = std::size_t(t.integer("d_k", long(m.d_k)));
    m.heads = std::size_t(t.integer("heads", long(m.heads)));
    m.separate_target_heads = t.boolean("separate_target_heads", m.separate_target_heads);
    m.seed = std::uint64_t(t.integer("model_seed", long(m.seed)));
    std::size_t ch = std::size_t(t.integer("tcn_channels", 64));
    std::size_t od = std::size_t(t.integer("tcn_output_dim", 64));
    for (BranchConfig* b : {&m.visual_tcn, &m.audio_tcn, &m.text_tcn}) {
        b->tcn_channels = {ch, ch};
        b->output_dim = od;
        b->dropout_rate = t.number("tcn_dropout", b->dropout_rate);
    }
    m.backbone.d_v = std::size_t(t.integer("backbone_d_v", long(m.backbone.d_v)));
    std::size_t c1 = std::size_t(t.integer("backbone_c1", 4));
    std::size_t c2 = std::size_t(t.integer("backbone_c2", 8));
    std::size_t c3 = std::size_t(t.integer("backbone_c3", 16));
    m.backbone.stage_channels = {c1, c2, c3};
    return m;
}

// ---- scheduler ----

enum class SchedulerEvent { None, Unfreeze, Stop };

struct SchedulerState {
    double current_lr = 0.0;
    std::size_t epoch = 0;
    std::size_t plateau_counter = 0;
    std::size_t unfreeze_stage_index = 0;  // how many stages already unfrozen
    double best_val_ccc = -std::numeric_limits<double>::infinity();
    std::string best_checkpoint_ref;
    std::size_t early_stop_counter = 0;
};

/// One epoch tick of the schedule: linear warmup to lr over warmup_epochs,
/// then reduce-on-plateau; whenever the decayed rate drops below min_lr the
/// next parameter group is unfrozen and the rate resets, until no stages
/// remain, which stops the run.
inline SchedulerEvent scheduler_step(SchedulerState& st, const TrainConfig& cfg, bool improved) {
    st.epoch += 1;
    if (st.epoch <= cfg.warmup_epochs) {
        st.current_lr = (double(st.epoch) / double(cfg.warmup_epochs)) * cfg.lr;
        st.plateau_counter = 0;
        return SchedulerEvent::None;
    }
    if (improved) {
        st.plateau_counter = 0;
        return SchedulerEvent::None;
    }
    st.plateau_counter += 1;
    if (st.plateau_counter < cfg.plateau_patience) return SchedulerEvent::None;
    st.plateau_counter = 0;
    st.current_lr *= cfg.plateau_factor;
    if (st.current_lr >= cfg.min_lr) return SchedulerEvent::None;
    if (st.unfreeze_stage_index < cfg.unfreeze_stages.size()) {
        st.unfreeze_stage_index += 1;
        st.current_lr = cfg.lr;
        return SchedulerEvent::Unfreeze;
    }
    return SchedulerEvent::Stop;
}

// ---- optimizer ----

/// Adam with decoupled weight decay.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(Model& model, double lr, double weight_decay) {
        t_ += 1;
        double bc1 = 1.0 - std::pow(beta1_, double(t_));
        double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (auto& [name, p] : model.params()) {
            if (!p.requires_grad() || !p.has_grad()) continue;
            Tensor param = p;  // shallow handle
            auto& [m, v] = state_[name];
            if (m.size() != param.size()) {
                m.assign(param.size(), 0.0);
                v.assign(param.size(), 0.0);
            }
            const auto& g = param.grad();
            auto& d = param.data();
            for (std::size_t i = 0; i < d.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                d[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
                d[i] -= lr * weight_decay * d[i];
            }
        }
    }

private:
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

// ---- window tensor assembly ----

namespace detail {

/// Cropped, pixel-normalized visual window as [len x 3 x 40 x 40].
inline Tensor window_visual_tensor(const Trial& trial, const Window& w, WindowMode mode,
                                   std::uint64_t aug_seed) {
    std::size_t valid = w.end - w.start;
    Matrix slice;
    slice.rows = valid;
    slice.cols = kFramePixels;
    slice.values.assign(trial.visual.values.begin() + w.start * kFramePixels,
                        trial.visual.values.begin() + w.end * kFramePixels);
    Matrix cropped = augment_visual(slice, mode, aug_seed);
    std::vector<double> data(w.len * cropped.cols, normalize_pixel(0.0));
    for (std::size_t i = 0; i < valid * cropped.cols; ++i)
        data[i] = normalize_pixel(double(cropped.values[i]));
    return Tensor({w.len, 3, kCropSize, kCropSize}, std::move(data));
}

/// Zero-padded feature window as [len x d].
inline Tensor window_feature_tensor(const Matrix& feat, const Window& w) {
    std::size_t valid = w.end - w.start;
    std::vector<double> data(w.len * feat.cols, 0.0);
    for (std::size_t i = 0; i < valid * feat.cols; ++i)
        data[i] = double(feat.values[w.start * feat.cols + i]);
    return Tensor({w.len, feat.cols}, std::move(data));
}

}  // namespace detail

/// Inference over eval windows with overlap averaging: every frame's value
/// is the mean of the predictions from all windows covering it.
struct TrialPrediction {
    std::vector<double> valence;
    std::vector<double> arousal;
};

inline TrialPrediction predict_trial(const Model& model, const Trial& trial,
                                     const WindowConfig& wcfg) {
    NoGradGuard ng;
    std::size_t n = trial.length();
    TrialPrediction out;
    out.valence.assign(n, 0.0);
    out.arousal.assign(n, 0.0);
    std::vector<double> counts(n, 0.0);
    for (const Window& w : make_windows(n, wcfg, WindowMode::Eval)) {
        Tensor vis = detail::window_visual_tensor(trial, w, WindowMode::Eval, 0);
        Tensor aud = detail::window_feature_tensor(trial.audio, w);
        Tensor txt = detail::window_feature_tensor(trial.text, w);
        ModelOutput pred = model.forward(vis, aud, txt, false, nullptr);
        for (std::size_t i = 0; i < w.end - w.start; ++i) {
            out.valence[w.start + i] += pred.valence.data()[i];
            out.arousal[w.start + i] += pred.arousal.data()[i];
            counts[w.start + i] += 1.0;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.valence[i] /= counts[i];
        out.arousal[i] /= counts[i];
    }
    return out;
}

// ---- training ----

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_ccc_valence = 0.0;
    double val_ccc_arousal = 0.0;
    double val_ccc_mean = 0.0;
    bool improved = false;
    std::string event;  // "", "plateau_decay", "unfreeze:<group>", "early_stop", "stop"
};

struct TrainResult {
    std::vector<std::pair<std::string, std::vector<double>>> best_state;
    double best_val_ccc = 0.0;
    std::vector<EpochLog> log;
    std::string stop_reason;
};

/// Validation CCC: per-trial CCC averaged over trials by default, or CCC of
/// the concatenated predictions when global_val_ccc is set.
inline CccReport validation_ccc(const Model& model, const std::vector<Trial>& val_trials,
                                const WindowConfig& wcfg, bool global_ccc) {
    CccReport rep;
    if (global_ccc) {
        std::vector<double> pv, pa, gv, ga;
        for (const Trial& t : val_trials) {
            TrialPrediction p = predict_trial(model, t, wcfg);
            pv.insert(pv.end(), p.valence.begin(), p.valence.end());
            pa.insert(pa.end(), p.arousal.begin(), p.arousal.end());
            gv.insert(gv.end(), t.valence.begin(), t.valence.end());
            ga.insert(ga.end(), t.arousal.begin(), t.arousal.end());
        }
        return evaluate(pv, pa, gv, ga);
    }
    for (const Trial& t : val_trials) {
        TrialPrediction p = predict_trial(model, t, wcfg);
        CccReport r = evaluate(p.valence, p.arousal, t.valence, t.arousal);
        rep.ccc_valence += r.ccc_valence / double(val_trials.size());
        rep.ccc_arousal += r.ccc_arousal / double(val_trials.size());
    }
    rep.mean_ccc = (rep.ccc_valence + rep.ccc_arousal) / 2.0;
    return rep;
}

struct WindowRef {
    std::size_t trial = 0;
    Window window;
};

/// Trains one fold: all trials outside fold_idx train, fold_idx validates.
/// Implements warmup, plateau decay, staged unfreezing, best-state reload
/// after every non-improving epoch, and early stopping. The early-stop
/// counter resets on unfreeze so a freshly opened stage gets a fair run.
inline TrainResult train_fold(std::vector<Trial>& trials, const FoldPlan& plan,
                              std::size_t fold_idx, const TrainConfig& cfg,
                              const ModelConfig& mcfg,
                              const std::filesystem::path& checkpoint_dir = {},
                              std::ostream* log_stream = nullptr) {
    cfg.validate();
    if (fold_idx >= kNumFolds) throw ValidationError("fold index out of range");

    std::vector<Trial*> train_trials;
    std::vector<Trial> val_trials_storage;
    std::vector<std::size_t> val_idx, train_idx;
    {
        std::set<std::string> held(plan.folds[fold_idx].begin(), plan.folds[fold_idx].end());
        for (std::size_t i = 0; i < trials.size(); ++i)
            (held.count(trials[i].trial_id) ? val_idx : train_idx).push_back(i);
    }
    if (train_idx.empty() || val_idx.empty())
        throw EmptyFold("fold " + std::to_string(fold_idx) + " leaves an empty train or val set");

    // Normalization stats from the training folds only, applied everywhere.
    {
        std::vector<const Matrix*> au, tx;
        for (std::size_t i : train_idx) {
            au.push_back(&trials[i].audio);
            tx.push_back(&trials[i].text);
        }
        NormStats as = compute_norm_stats(au);
        NormStats ts = compute_norm_stats(tx);
        for (Trial& t : trials) {
            apply_norm_stats(t.audio, as);
            apply_norm_stats(t.text, ts);
        }
    }

    Model model(mcfg);
    AdamOptimizer adam;
    WindowConfig wcfg{cfg.window_len, cfg.hop, cfg.hop / 2};

    std::vector<WindowRef> train_windows;
    for (std::size_t i : train_idx)
        for (const Window& w : make_windows(trials[i].length(), wcfg, WindowMode::Train))
            train_windows.push_back({i, w});

    std::vector<Trial> val_view;
    for (std::size_t i : val_idx) val_view.push_back(trials[i]);

    SchedulerState sched;
    sched.current_lr = cfg.lr / double(cfg.warmup_epochs);
    TrainResult result;
    result.best_state = model.state();
    result.best_val_ccc = -std::numeric_limits<double>::infinity();

    // The scheduler ticks at the start of each epoch with the previous
    // epoch's improvement flag, so epoch e trains at the warmup rate
    // lr(e) = (e / warmup_epochs) * lr.
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eedu);
    bool last_improved = false;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double pre_lr = sched.current_lr;
        SchedulerEvent ev = scheduler_step(sched, cfg, last_improved);
        std::string event;
        if (ev == SchedulerEvent::Stop) {
            result.stop_reason = "schedule_exhausted";
            break;
        }
        if (ev == SchedulerEvent::Unfreeze) {
            const std::string& group = cfg.unfreeze_stages[sched.unfreeze_stage_index - 1];
            model.unfreeze_group(group);
            sched.early_stop_counter = 0;
            event = "unfreeze:" + group;
        } else if (epoch > cfg.warmup_epochs && sched.current_lr < pre_lr * 0.999) {
            event = "plateau_decay";
        }
        std::shuffle(train_windows.begin(), train_windows.end(), shuffle_rng);
        std::mt19937_64 dropout_rng(cfg.seed * 1000003u + epoch);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < train_windows.size(); b += cfg.batch_size) {
            std::size_t bend = std::min(b + cfg.batch_size, train_windows.size());
            model.zero_grad();
            Tensor batch_loss = Tensor::scalar(0.0);
            for (std::size_t k = b; k < bend; ++k) {
                const WindowRef& wr = train_windows[k];
                const Trial& trial = trials[wr.trial];
                std::uint64_t aug_seed =
                    cfg.seed * 2654435761u + epoch * 1000003u + k * 97u + wr.window.start;
                Tensor vis =
                    detail::window_visual_tensor(trial, wr.window, WindowMode::Train, aug_seed);
                Tensor aud = detail::window_feature_tensor(trial.audio, wr.window);
                Tensor txt = detail::window_feature_tensor(trial.text, wr.window);
                ModelOutput pred = model.forward(vis, aud, txt, true, &dropout_rng);
                std::size_t valid = wr.window.end - wr.window.start;
                std::vector<double> gv(trial.valence.begin() + wr.window.start,
                                       trial.valence.begin() + wr.window.end);
                std::vector<double> ga(trial.arousal.begin() + wr.window.start,
                                       trial.arousal.begin() + wr.window.end);
                Tensor lv = ccc_loss(slice_rows(pred.valence, 0, valid), gv);
                Tensor la = ccc_loss(slice_rows(pred.arousal, 0, valid), ga);
                batch_loss = add(batch_loss, mul_scalar(add(lv, la), 0.5 / double(bend - b)));
            }
            batch_loss.backward();
            adam.step(model, sched.current_lr, cfg.weight_decay);
            loss_sum += batch_loss.item();
            batches += 1;
        }

        CccReport val = validation_ccc(model, val_view, wcfg, cfg.global_val_ccc);
        bool improved = val.mean_ccc > result.best_val_ccc + cfg.improve_eps;

        EpochLog el;
        el.epoch = epoch;
        el.lr = sched.current_lr;
        el.train_loss = batches ? loss_sum / double(batches) : 0.0;
        el.val_ccc_valence = val.ccc_valence;
        el.val_ccc_arousal = val.ccc_arousal;
        el.val_ccc_mean = val.mean_ccc;
        el.improved = improved;
        el.event = event;

        if (improved) {
            result.best_val_ccc = val.mean_ccc;
            result.best_state = model.state();
            sched.best_val_ccc = val.mean_ccc;
            sched.early_stop_counter = 0;
            if (!checkpoint_dir.empty()) {
                std::filesystem::create_directories(checkpoint_dir);
                auto ref = checkpoint_dir / ("fold" + std::to_string(fold_idx) + "_best.ckpt");
                std::vector<ParamRecord> recs;
                for (const auto& [name, t] : model.params()) {
                    ParamRecord r;
                    r.name = name;
                    r.dims = t.shape();
                    r.values = t.data();
                    recs.push_back(std::move(r));
                }
                write_checkpoint(ref, recs);
                sched.best_checkpoint_ref = ref.string();
            }
        } else {
            // Reload the best state so training cannot drift into overfit.
            model.load_state(result.best_state);
            sched.early_stop_counter += 1;
        }

        last_improved = improved;
        if (sched.early_stop_counter >= cfg.early_stop_patience) {
            el.event = el.event.empty() ? "early_stop" : el.event + ",early_stop";
            result.log.push_back(el);
            result.stop_reason = "early_stop";
            break;
        }
        result.log.push_back(el);
        if (log_stream)
            (*log_stream) << "epoch " << epoch << " lr " << el.lr << " loss " << el.train_loss
                          << " val_ccc " << el.val_ccc_mean << (improved ? " *" : "")
                          << (el.event.empty() ? "" : " [" + el.event + "]") << "\n";
    }
    if (result.stop_reason.empty()) result.stop_reason = "max_epochs";
    return result;
}

// ---- checkpoint <-> model ----

inline std::vector<ParamRecord> model_to_records(const Model& model) {
    std::vector<ParamRecord> recs;
    for (const auto& [name, t] : model.params()) {
        ParamRecord r;
        r.name = name;
        r.dims = t.shape();
        r.values = t.data();
        recs.push_back(std::move(r));
    }
    return recs;
}

inline void load_records_into_model(Model& model, const std::vector<ParamRecord>& recs) {
    std::vector<std::pair<std::string, std::vector<double>>> st;
    for (const auto& r : recs) st.push_back({r.name, r.values});
    if (st.size() != model.params().size())
        throw CheckpointMismatch("checkpoint has " + std::to_string(st.size()) +
                                 " parameters, model expects " +
                                 std::to_string(model.params().size()));
    for (std::size_t i = 0; i < st.size(); ++i) {
        if (recs[i].dims != model.params()[i].second.shape())
            throw CheckpointMismatch("shape drift for parameter " + recs[i].name);
    }
    model.load_state(st);
}

// ---- prediction + fusion pipeline ----

/// Per-fold inference followed by CCC-centering across folds and clipping.
/// Returns the fused predictions per trial, plus a report when gold labels
/// are available.
struct FusedPredictions {
    std::map<std::string, TrialPrediction> per_trial;
    std::optional<CccReport> report;
};

inline FusedPredictions predict_and_fuse(const std::vector<std::filesystem::path>& checkpoints,
                                         std::vector<Trial>& trials, const TrainConfig& cfg,
                                         const ModelConfig& mcfg, bool use_ewe = false) {
    if (checkpoints.size() < 2)
        throw ValidationError("predict_and_fuse: need at least 2 checkpoints");
    WindowConfig wcfg{cfg.window_len, cfg.hop, cfg.hop / 2};
    std::map<std::string, std::vector<TrialPrediction>> per_fold;
    for (const auto& ck : checkpoints) {
        Model model(mcfg);
        load_records_into_model(model, read_checkpoint(ck));
        for (const Trial& t : trials) per_fold[t.trial_id].push_back(predict_trial(model, t, wcfg));
    }
    FusedPredictions out;
    std::vector<double> pv, pa, gv, ga;
    for (Trial& t : trials) {
        RaterSet rv, ra;
        for (const auto& p : per_fold[t.trial_id]) {
            rv.push_back(p.valence);
            ra.push_back(p.arousal);
        }
        TrialPrediction fused;
        fused.valence = clip(use_ewe ? ewe_merge(rv) : ccc_center(rv));
        fused.arousal = clip(use_ewe ? ewe_merge(ra) : ccc_center(ra));
        pv.insert(pv.end(), fused.valence.begin(), fused.valence.end());
        pa.insert(pa.end(), fused.arousal.begin(), fused.arousal.end());
        gv.insert(gv.end(), t.valence.begin(), t.valence.end());
        ga.insert(ga.end(), t.arousal.begin(), t.arousal.end());
        out.per_trial[t.trial_id] = std::move(fused);
    }
    if (!gv.empty()) out.report = evaluate(pv, pa, gv, ga);
    return out;
}

// ---- prediction file I/O ----

inline void write_prediction_csv(const std::filesystem::path& path, const TrialPrediction& p) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "frame,valence,arousal\n";
    os.precision(17);
    for (std::size_t i = 0; i < p.valence.size(); ++i)
        os << i << "," << p.valence[i] << "," << p.arousal[i] << "\n";
}

inline TrialPrediction read_prediction_csv(const std::filesystem::path& path) {
    TrialPrediction p;
    auto lines = read_lines(path);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = split_csv_line(lines[i]);
        if (f.size() != 3) throw MalformedRow("prediction row " + std::to_string(i + 1));
        p.valence.push_back(detail::parse_double_field(f[1], path.string()));
        p.arousal.push_back(detail::parse_double_field(f[2], path.string()));
    }
    return p;
}

}  // namespace ava
