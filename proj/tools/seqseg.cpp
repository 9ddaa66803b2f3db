#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqseg/gradsuite.hpp"
#include "seqseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqseg;

namespace {

std::uint64_t env_seed_default() {
    if (const char* s = std::getenv("SEQSEG_SEED")) {
        try {
            return std::stoull(s);
        } catch (const std::exception&) {
            throw ConfigError(std::string("SEQSEG_SEED is not an integer: ") + s);
        }
    }
    return 1;
}

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open config file '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("config parse error in '" + path + "': " + e.what());
    }
}

template <class T>
void maybe(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

void apply_gen_config(GenConfig& c, const json& j) {
    if (j.contains("dims")) {
        auto d = j.at("dims").get<std::vector<int>>();
        if (d.size() != 3) throw FormatError("config: dims must have 3 entries");
        c.dims = {d[0], d[1], d[2]};
    }
    if (j.contains("spacing_mm")) {
        auto s = j.at("spacing_mm").get<std::vector<double>>();
        if (s.size() != 3) throw FormatError("config: spacing_mm must have 3 entries");
        c.spacing_mm = {s[0], s[1], s[2]};
    }
    maybe(j, "center_step_vox", c.center_step_vox);
    maybe(j, "radius_step_vox", c.radius_step_vox);
    maybe(j, "radius_min_vox", c.radius_min_vox);
    maybe(j, "radius_max_vox", c.radius_max_vox);
    maybe(j, "fg_mean", c.fg_mean);
    maybe(j, "bg_mean", c.bg_mean);
    maybe(j, "noise_sigma", c.noise_sigma);
    maybe(j, "distractor_count", c.distractor_count);
}

void apply_train_config(TrainConfig& c, const json& j) {
    if (j.contains("loss")) {
        const std::string s = j.at("loss").get<std::string>();
        if (s == "jac")
            c.loss = LossKind::Jac;
        else if (s == "ce")
            c.loss = LossKind::Ce;
        else if (s == "cbce")
            c.loss = LossKind::Cbce;
        else
            throw FormatError("config: unknown loss '" + s + "'");
    }
    maybe(j, "learning_rate", c.learning_rate);
    maybe(j, "lr_decay", c.lr_decay);
    maybe(j, "decay_interval_epochs", c.decay_interval_epochs);
    maybe(j, "momentum", c.momentum);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "convergence_window", c.convergence_window);
    maybe(j, "convergence_tol", c.convergence_tol);
    maybe(j, "max_epochs_per_stage", c.max_epochs_per_stage);
    maybe(j, "val_fraction", c.val_fraction);
    maybe(j, "keep_deep_supervision", c.keep_deep_supervision);
    maybe(j, "finetune_epochs", c.finetune_epochs);
    maybe(j, "finetune_learning_rate", c.finetune_learning_rate);
    maybe(j, "finetune_perturb_prob", c.finetune_perturb_prob);
    maybe(j, "merge_val_phase", c.merge_val_phase);
    if (j.contains("pnet")) {
        const json& p = j.at("pnet");
        maybe(p, "unit_count", c.pnet.unit_count);
        maybe(p, "channels", c.pnet.channels);
        maybe(p, "msa_channels", c.pnet.msa_channels);
        maybe(p, "bn_eps", c.pnet.bn_eps);
        maybe(p, "bn_momentum", c.pnet.bn_momentum);
    }
}

const char* loss_name(LossKind k) {
    switch (k) {
        case LossKind::Jac: return "jac";
        case LossKind::Ce: return "ce";
        case LossKind::Cbce: return "cbce";
    }
    return "?";
}

void print_train_config(const TrainConfig& c) {
    std::cout << "config: loss=" << loss_name(c.loss) << " lr=" << c.learning_rate
              << " decay=" << c.lr_decay << "/" << c.decay_interval_epochs
              << " momentum=" << c.momentum << " batch=" << c.batch_size
              << " window=" << c.convergence_window << " tol=" << c.convergence_tol
              << " max_epochs=" << c.max_epochs_per_stage << " seed=" << c.seed
              << " val_fraction=" << c.val_fraction << "\n"
              << "config: pnet K=" << c.pnet.unit_count << " channels=" << c.pnet.channels
              << " msa=" << c.pnet.msa_channels << " bn_eps=" << c.pnet.bn_eps
              << " bn_momentum=" << c.pnet.bn_momentum << "\n";
}

std::vector<SynthCase> load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw InputError("data dir '" + dir + "' not found");
    std::map<std::string, std::string> imgs, masks;
    for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > 9 && name.ends_with("_img.svol"))
            imgs[name.substr(0, name.size() - 9)] = e.path().string();
        else if (name.size() > 10 && name.ends_with("_mask.svol"))
            masks[name.substr(0, name.size() - 10)] = e.path().string();
    }
    if (imgs.empty()) throw InputError("data dir '" + dir + "' has no *_img.svol files");
    std::vector<SynthCase> out;
    for (const auto& [stem, ipath] : imgs) {
        auto it = masks.find(stem);
        if (it == masks.end())
            throw InputError("volume '" + ipath + "' has no matching mask");
        SynthCase c;
        c.image = read_volume_f64(ipath);
        c.mask = read_volume_mask(it->second);
        if (c.image.dims != c.mask.dims)
            throw InputError("case '" + stem + "': image/mask dims differ");
        out.push_back(std::move(c));
    }
    return out;
}

int cmd_synth(const std::string& config_path, int count, const std::string& out_dir,
              std::uint64_t seed, bool mri) {
    GenConfig base = mri ? mri_like_config() : GenConfig{};
    if (!config_path.empty()) apply_gen_config(base, load_json_file(config_path));
    std::cout << "config: dims=" << base.dims[0] << "x" << base.dims[1] << "x"
              << base.dims[2] << " spacing=" << base.spacing_mm[0] << ","
              << base.spacing_mm[1] << "," << base.spacing_mm[2]
              << " radius=" << base.radius_min_vox << ".." << base.radius_max_vox
              << " noise=" << base.noise_sigma << " distractors=" << base.distractor_count
              << " seed=" << seed << "\n";
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        GenConfig c = base;
        c.seed = seed + static_cast<std::uint64_t>(i);
        SynthCase sc = generate_case(c);
        char stem[32];
        std::snprintf(stem, sizeof stem, "case%03d", i);
        write_volume(out_dir + "/" + stem + "_img.svol", sc.image);
        write_volume(out_dir + "/" + stem + "_mask.svol", sc.mask);
    }
    std::cout << "wrote " << count << " cases to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_ckpt, std::uint64_t seed) {
    TrainConfig config;
    config.seed = seed;
    if (!config_path.empty()) apply_train_config(config, load_json_file(config_path));
    print_train_config(config);
    std::vector<SynthCase> data = load_dataset(data_dir);
    Checkpoint ckpt = train_staged(data, config);
    save_checkpoint(out_ckpt, ckpt);
    std::ofstream hist(out_ckpt + ".history.csv");
    hist << history_csv(ckpt.history);
    std::cout << "trained to stage " << ckpt.stage << ", " << ckpt.history.size()
              << " history rows, checkpoint " << out_ckpt << "\n";
    return 0;
}

int cmd_finetune(const std::string& ckpt_path, const std::string& data_dir,
                 const std::string& config_path, const std::string& out_ckpt) {
    Checkpoint start = load_checkpoint(ckpt_path);
    TrainConfig config = start.config;
    if (!config_path.empty()) apply_train_config(config, load_json_file(config_path));
    print_train_config(config);
    std::vector<SynthCase> data = load_dataset(data_dir);
    Checkpoint tuned = finetune_birnn(start, data, config);
    save_checkpoint(out_ckpt, tuned);
    std::ofstream hist(out_ckpt + ".history.csv");
    hist << history_csv(tuned.history);
    std::cout << "finetuned " << config.finetune_epochs << " epochs, checkpoint "
              << out_ckpt << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& vol_path,
              const std::string& out_prob, bool use_rnn) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Volume image = read_volume_f64(vol_path);
    Volume prob = infer_prob_volume(ckpt, image, use_rnn);
    write_volume(out_prob, prob);
    std::cout << "wrote probability volume " << out_prob << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, double threshold,
             const std::string& report_path, int threads) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    std::vector<SynthCase> data = load_dataset(data_dir);
    EvalResult r = evaluate(ckpt, data, threshold, threads);
    std::ofstream rep(report_path);
    if (!rep) throw FormatError("cannot open report path '" + report_path + "'");
    rep << r.cnn.to_csv();
    std::cout << "cnn:\n" << r.cnn.to_text();
    if (r.rnn) {
        std::ofstream rnn_rep(report_path + ".rnn.csv");
        rnn_rep << r.rnn->to_csv();
        std::cout << "rnn:\n" << r.rnn->to_text();
    }
    return 0;
}

int cmd_gradcheck(const std::string& module, int seeds) {
    std::vector<GradSuiteEntry> entries = run_gradcheck(module, seeds);
    bool all_ok = true;
    for (const GradSuiteEntry& e : entries) {
        std::cout << (e.passed() ? "ok   " : "FAIL ") << e.name
                  << " max_rel_error=" << e.max_rel_error << " tol=" << e.tolerance
                  << "\n";
        all_ok = all_ok && e.passed();
    }
    if (!all_ok) throw NumericError("gradient check failed");
    return 0;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& data_dir,
              const std::string& out_csv) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    std::vector<SynthCase> data = load_dataset(data_dir);
    std::vector<double> thresholds;
    for (int i = 1; i <= 19; ++i) thresholds.push_back(0.05 * i);

    std::vector<double> mean_dsc(thresholds.size(), 0.0);
    for (const SynthCase& cs : data) {
        Volume prob = infer_prob_volume(ckpt, cs.image, false);
        std::vector<ThresholdDsc> sw =
            threshold_sweep(prob.voxels, cs.mask.voxels, thresholds);
        for (std::size_t i = 0; i < sw.size(); ++i) mean_dsc[i] += sw[i].dsc;
    }
    std::ofstream os(out_csv);
    if (!os) throw FormatError("cannot open sweep output '" + out_csv + "'");
    os << "threshold,mean_dsc\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (std::size_t i = 0; i < thresholds.size(); ++i)
        os << thresholds[i] << ',' << mean_dsc[i] / static_cast<double>(data.size())
           << '\n';
    std::cout << "wrote sweep " << out_csv << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential CNN-RNN pancreas-style segmentation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    bool seed_given = false;
    app.add_option("--seed", seed, "global RNG seed (falls back to SEQSEG_SEED, then 1)")
        ->each([&](const std::string&) { seed_given = true; });

    std::string config_path, data_dir, out_dir, ckpt_path, out_ckpt, vol_path, out_prob;
    std::string report_path, out_csv, module = "all";
    int count = 4, threads = 1, seeds = 20;
    double threshold = 0.5;
    bool mri = false, use_rnn = false;

    CLI::App* synth = app.add_subcommand("synth", "generate synthetic volumes");
    synth->add_option("--config", config_path, "generator config JSON");
    synth->add_option("--count", count, "number of cases")->required();
    synth->add_option("--out-dir", out_dir, "output directory")->required();
    synth->add_flag("--mri", mri, "MRI-like spacing preset");

    CLI::App* train = app.add_subcommand("train", "staged CNN training");
    train->add_option("--data-dir", data_dir)->required();
    train->add_option("--config", config_path, "training config JSON");
    train->add_option("--out-ckpt", out_ckpt)->required();

    CLI::App* ft = app.add_subcommand("finetune-rnn", "attach and finetune the BiRNN");
    ft->add_option("--ckpt", ckpt_path)->required();
    ft->add_option("--data-dir", data_dir)->required();
    ft->add_option("--config", config_path, "training config JSON");
    ft->add_option("--out-ckpt", out_ckpt)->required();

    CLI::App* infer = app.add_subcommand("infer", "probability inference on one volume");
    infer->add_option("--ckpt", ckpt_path)->required();
    infer->add_option("--volume", vol_path)->required();
    infer->add_option("--out-prob", out_prob)->required();
    infer->add_flag("--rnn", use_rnn, "refine through the BiRNN");

    CLI::App* eval = app.add_subcommand("eval", "metric report over a dataset");
    eval->add_option("--ckpt", ckpt_path)->required();
    eval->add_option("--data-dir", data_dir)->required();
    eval->add_option("--threshold", threshold);
    eval->add_option("--report", report_path)->required();
    eval->add_option("--threads", threads, "evaluation pool size (1 = bit-reproducible)");

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient oracle");
    gc->add_option("--module", module)
        ->check(CLI::IsMember({"all", "tensor", "pnet", "birnn", "losses"}));
    gc->add_option("--seeds", seeds, "seeds per check");

    CLI::App* sweep = app.add_subcommand("sweep", "DSC vs threshold curve");
    sweep->add_option("--ckpt", ckpt_path)->required();
    sweep->add_option("--data-dir", data_dir)->required();
    sweep->add_option("--out-csv", out_csv)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage: " << e.what() << "\n";
        return 1;
    }

    try {
        if (!seed_given) seed = env_seed_default();
        if (synth->parsed()) return cmd_synth(config_path, count, out_dir, seed, mri);
        if (train->parsed()) return cmd_train(data_dir, config_path, out_ckpt, seed);
        if (ft->parsed()) return cmd_finetune(ckpt_path, data_dir, config_path, out_ckpt);
        if (infer->parsed()) return cmd_infer(ckpt_path, vol_path, out_prob, use_rnn);
        if (eval->parsed())
            return cmd_eval(ckpt_path, data_dir, threshold, report_path, threads);
        if (gc->parsed()) return cmd_gradcheck(module, seeds);
        if (sweep->parsed()) return cmd_sweep(ckpt_path, data_dir, out_csv);
    } catch (const ConfigError& e) {
        std::cerr << "usage: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric: " << e.what() << "\n";
        return 3;
    } catch (const std::runtime_error& e) {
        // ShapeError / FormatError / InputError and filesystem failures
        std::cerr << "data: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
