// Command-line front end: synthetic data generation, fold planning,
// per-fold training, inference, prediction fusion, and evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ava/config.hpp"
#include "ava/data.hpp"
#include "ava/folds.hpp"
#include "ava/metrics.hpp"
#include "ava/synth.hpp"
#include "ava/train.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<ava::Trial> load_all_trials(const std::vector<ava::ManifestEntry>& manifest) {
    std::vector<ava::Trial> trials;
    trials.reserve(manifest.size());
    for (const auto& e : manifest) trials.push_back(ava::load_trial(e));
    return trials;
}

ava::ModelConfig model_config_for(const ava::TomlTable& toml, const std::vector<ava::Trial>& trials) {
    ava::ModelConfig mcfg = ava::model_config_from_toml(toml);
    mcfg.finalize(trials.at(0).audio.cols, trials.at(0).text.cols);
    return mcfg;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    ava::SynthSpec spec = ava::SynthSpec::from_toml(ava::TomlTable::parse_file(spec_path));
    auto manifest = ava::generate_synth(spec, out_dir);
    std::cout << "wrote " << manifest.size() << " trials to " << out_dir << "\n";
    return 0;
}

int cmd_folds(const std::string& manifest_path, std::uint64_t seed, const std::string& out_path) {
    auto manifest = ava::parse_manifest(manifest_path);
    ava::FoldPlan plan = ava::make_folds(manifest, seed);
    ava::write_fold_plan(out_path, plan);
    for (std::size_t f = 0; f < plan.folds.size(); ++f)
        std::cout << "fold " << f << ": " << plan.folds[f].size() << " trials\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& folds_path, std::size_t fold,
              const std::string& config_path, const std::string& out_dir) {
    auto manifest = ava::parse_manifest(manifest_path);
    auto toml = ava::TomlTable::parse_file(config_path);
    ava::TrainConfig cfg = ava::TrainConfig::from_toml(toml);
    ava::FoldPlan plan = ava::read_fold_plan(folds_path);
    auto trials = load_all_trials(manifest);
    ava::ModelConfig mcfg = model_config_for(toml, trials);

    ava::TrainResult result =
        ava::train_fold(trials, plan, fold, cfg, mcfg, out_dir, &std::cout);

    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / ("fold" + std::to_string(fold) + "_log.csv"));
    log << "epoch,lr,train_loss,val_ccc_valence,val_ccc_arousal,val_ccc_mean,improved,event\n";
    log.precision(17);
    for (const auto& e : result.log)
        log << e.epoch << "," << e.lr << "," << e.train_loss << "," << e.val_ccc_valence << ","
            << e.val_ccc_arousal << "," << e.val_ccc_mean << "," << (e.improved ? 1 : 0) << ","
            << e.event << "\n";
    std::cout << "best validation mean CCC " << result.best_val_ccc << " (" << result.stop_reason
              << ")\n";
    return 0;
}

int cmd_predict(const std::string& manifest_path, const std::vector<std::string>& checkpoints,
                const std::string& config_path, const std::string& out_dir) {
    auto manifest = ava::parse_manifest(manifest_path);
    auto toml = config_path.empty() ? ava::TomlTable() : ava::TomlTable::parse_file(config_path);
    ava::TrainConfig cfg = ava::TrainConfig::from_toml(toml);
    auto trials = load_all_trials(manifest);
    ava::ModelConfig mcfg = model_config_for(toml, trials);

    // Normalization statistics from the training partition, as in training.
    {
        std::vector<const ava::Matrix*> au, tx;
        for (std::size_t i = 0; i < trials.size(); ++i)
            if (manifest[i].partition != "val") {
                au.push_back(&trials[i].audio);
                tx.push_back(&trials[i].text);
            }
        ava::NormStats as = ava::compute_norm_stats(au);
        ava::NormStats ts = ava::compute_norm_stats(tx);
        for (auto& t : trials) {
            ava::apply_norm_stats(t.audio, as);
            ava::apply_norm_stats(t.text, ts);
        }
    }

    ava::WindowConfig wcfg{cfg.window_len, cfg.hop, cfg.hop / 2};
    for (std::size_t k = 0; k < checkpoints.size(); ++k) {
        ava::Model model(mcfg);
        ava::load_records_into_model(model, ava::read_checkpoint(checkpoints[k]));
        fs::path fold_dir = fs::path(out_dir) / ("fold" + std::to_string(k));
        fs::create_directories(fold_dir);
        for (const auto& t : trials) {
            ava::TrialPrediction p = ava::predict_trial(model, t, wcfg);
            ava::write_prediction_csv(fold_dir / (t.trial_id + ".csv"), p);
        }
        std::cout << "fold " << k << " predictions written\n";
    }
    return 0;
}

int cmd_center(const std::string& preds_dir, const std::string& method,
               const std::string& out_dir) {
    if (method != "ccc" && method != "ewe")
        throw ava::ValidationError("--method must be 'ccc' or 'ewe'");
    std::vector<fs::path> fold_dirs;
    for (std::size_t k = 0;; ++k) {
        fs::path d = fs::path(preds_dir) / ("fold" + std::to_string(k));
        if (!fs::is_directory(d)) break;
        fold_dirs.push_back(d);
    }
    if (fold_dirs.size() < 2) throw ava::ValidationError("need at least 2 fold directories");
    fs::create_directories(out_dir);
    std::size_t count = 0;
    for (const auto& entry : fs::directory_iterator(fold_dirs[0])) {
        if (entry.path().extension() != ".csv") continue;
        ava::RaterSet rv, ra;
        for (const auto& d : fold_dirs) {
            ava::TrialPrediction p = ava::read_prediction_csv(d / entry.path().filename());
            rv.push_back(p.valence);
            ra.push_back(p.arousal);
        }
        ava::TrialPrediction fused;
        fused.valence = ava::clip(method == "ewe" ? ava::ewe_merge(rv) : ava::ccc_center(rv));
        fused.arousal = ava::clip(method == "ewe" ? ava::ewe_merge(ra) : ava::ccc_center(ra));
        ava::write_prediction_csv(fs::path(out_dir) / entry.path().filename(), fused);
        ++count;
    }
    std::cout << "fused " << count << " trials (" << method << ")\n";
    return 0;
}

int cmd_eval(const std::string& preds_dir, const std::string& manifest_path,
             const std::string& out_path) {
    auto manifest = ava::parse_manifest(manifest_path);
    std::ofstream os(out_path);
    if (!os) throw ava::IoError("cannot open for writing: " + out_path);
    os << "trial_id,ccc_valence,ccc_arousal,mean\n";
    os.precision(17);
    double sum_v = 0.0, sum_a = 0.0;
    std::size_t n = 0;
    for (const auto& e : manifest) {
        fs::path p = fs::path(preds_dir) / (e.trial_id + ".csv");
        if (!fs::exists(p)) continue;
        ava::AnnotationResult ann = ava::parse_annotations(e.annotation_path);
        ava::TrialPrediction pred = ava::read_prediction_csv(p);
        ava::CccReport r = ava::evaluate(pred.valence, pred.arousal, ann.valence, ann.arousal);
        os << e.trial_id << "," << r.ccc_valence << "," << r.ccc_arousal << "," << r.mean_ccc
           << "\n";
        sum_v += r.ccc_valence;
        sum_a += r.ccc_arousal;
        ++n;
    }
    if (n == 0) throw ava::ValidationError("no predictions matched the manifest");
    std::cout << "mean CCC over " << n << " trials: valence " << sum_v / double(n) << " arousal "
              << sum_a / double(n) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-visual-linguistic continuous emotion regression pipeline"};
    app.require_subcommand(1);

    std::string spec_path, out_path, manifest_path, folds_path, config_path, preds_dir, method;
    std::vector<std::string> checkpoints;
    std::uint64_t seed = 0;
    std::size_t fold = 0;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--spec", spec_path, "SynthSpec TOML file")->required();
    synth->add_option("--out", out_path, "Output directory")->required();

    auto* folds = app.add_subcommand("folds", "Plan the 6-fold subject-independent split");
    folds->add_option("--manifest", manifest_path)->required();
    folds->add_option("--seed", seed);
    folds->add_option("--out", out_path, "Fold plan CSV")->required();

    auto* train = app.add_subcommand("train", "Train one fold");
    train->add_option("--manifest", manifest_path)->required();
    train->add_option("--folds", folds_path)->required();
    train->add_option("--fold", fold)->required();
    train->add_option("--config", config_path, "TrainConfig TOML")->required();
    train->add_option("--out", out_path, "Checkpoint directory")->required();

    auto* predict = app.add_subcommand("predict", "Run per-fold inference");
    predict->add_option("--manifest", manifest_path)->required();
    predict->add_option("--checkpoints", checkpoints, "Checkpoint files, fold order")->required();
    predict->add_option("--config", config_path, "TrainConfig TOML");
    predict->add_option("--out", out_path, "Prediction directory")->required();

    auto* center = app.add_subcommand("center", "Merge per-fold predictions");
    center->add_option("--preds", preds_dir)->required();
    center->add_option("--method", method, "ccc or ewe")->default_val("ccc");
    center->add_option("--out", out_path)->required();

    auto* eval = app.add_subcommand("eval", "Score predictions against gold labels");
    eval->add_option("--preds", preds_dir)->required();
    eval->add_option("--manifest", manifest_path)->required();
    eval->add_option("--out", out_path, "Report CSV")->required();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(spec_path, out_path);
        if (folds->parsed()) return cmd_folds(manifest_path, seed, out_path);
        if (train->parsed()) return cmd_train(manifest_path, folds_path, fold, config_path, out_path);
        if (predict->parsed()) return cmd_predict(manifest_path, checkpoints, config_path, out_path);
        if (center->parsed()) return cmd_center(preds_dir, method, out_path);
        if (eval->parsed()) return cmd_eval(preds_dir, manifest_path, out_path);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ava::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
