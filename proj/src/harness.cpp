#include "drum/harness.hpp"
#include "drum/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace drum::harness {

namespace fs = std::filesystem;
using simgen::Setting;

namespace {

struct MethodEntry {
    const char* canonical;
    const char* display;
    bool baseline;
};

const MethodEntry kMethods[] = {
    {"Baseline-ERM", "Baseline-ERM", true},
    {"Baseline-DRO", "Baseline-DRO", true},
    {"IW-KMM", "IW-KMM", true},
    {"IW-Classify", "IW-Classify", true},
    {"PL-Mean+ERM", "PL-Mean+ERM", true},
    {"PL-Mean+DRO", "PL-Mean+DRO", true},
    {"PL-MICE+ERM", "PL-MICE+ERM", true},
    {"PL-MICE+DRO", "PL-MICE+DRO", true},
    {"PL-MF+ERM", "PL-MF+ERM", true},
    {"PL-MF+DRO", "PL-MF+DRO", true},
    {"DRUM-Unconstrained", "DRUM (unconstrained)", false},
    {"DRUM", "DRUM", false},
    {"DRUM-Debiased-Unconstrained", "DRUM-Debiased (unconstrained)", false},
    {"DRUM-Debiased", "DRUM-Debiased", false},
};

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write: " + path);
    out << content;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open: " + path);
    return json::parse(in);
}

double sample_variance(const Vec& y) {
    double mean = y.mean();
    return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

std::string scale_label(double s) { return format_double(s); }

}  // namespace

const std::vector<std::string>& canonical_methods() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& m : kMethods) v.push_back(m.canonical);
        return v;
    }();
    return names;
}

bool is_baseline_method(const std::string& canonical) {
    for (const auto& m : kMethods)
        if (canonical == m.canonical) return m.baseline;
    throw ConfigError("unknown method: " + canonical);
}

std::string display_label(const std::string& canonical) {
    for (const auto& m : kMethods)
        if (canonical == m.canonical) return m.display;
    throw ConfigError("unknown method: " + canonical);
}

std::string canonical_method(const std::string& name) {
    for (const auto& m : kMethods)
        if (name == m.canonical || name == m.display) return m.canonical;
    // a few shorthand aliases
    if (name == "DRUM-U") return "DRUM-Unconstrained";
    if (name == "DRUM-Deb-U") return "DRUM-Debiased-Unconstrained";
    if (name == "DRUM-Deb") return "DRUM-Debiased";
    if (name == "Baseline-IW-KMM") return "IW-KMM";
    if (name == "Baseline-IW-Classify") return "IW-Classify";
    if (name.rfind("Baseline-PL-", 0) == 0) return canonical_method(name.substr(9));
    throw ConfigError("unknown method: " + name);
}

HpProfiles default_profiles(Setting setting, int d_A) {
    HpProfiles p;
    p.outcome = {1e-5, 100, {128, 128}, 128, 0};
    p.worstcase.q = std::max(4, setting == Setting::III ? d_A : 4);
    p.worstcase.L = 256;
    p.worstcase.lr = 1e-5;
    p.worstcase.epochs = 300;
    p.worstcase.hidden = {128, 128};
    p.engression = {5e-4, 16, 32, 500, 128, 0};
    p.constrained = {2e-4, 1e-4, 2.0, 80, 256, 128, 128, 0};
    p.delta = 0.3;
    p.density_ratio = {1e-5, 200, {128, 128}, 128, 20.0, 0};
    p.final_regression = {1e-5, 300, {128, 128}, 128, 0};
    p.fold_generator.unconstrained = p.worstcase;
    p.fold_generator.conditional_steps = 80;
    p.fold_generator.conditional_lr = 2e-4;
    p.fold_generator.conditional_clip = 2.0;
    p.K = 3;
    p.L = 256;

    auto set = [&](const char* name, double lr, int epochs, double rho = 0.25) {
        BaselineProfile bp;
        bp.hp.lr = lr;
        bp.hp.epochs = epochs;
        bp.rho = rho;
        p.baseline[name] = bp;
    };
    if (setting == Setting::I) {
        set("Baseline-ERM", 1e-3, 20);
        set("Baseline-DRO", 5e-4, 50, 0.25);
        set("IW-KMM", 1e-3, 30);
        set("IW-Classify", 5e-4, 50);
    } else {
        set("Baseline-ERM", 1e-3, 50);
        set("Baseline-DRO", 1e-3, 50, setting == Setting::II ? 0.5 : 0.25);
        set("IW-KMM", 1e-3, 50);
        set("IW-Classify", 1e-3, 50);
    }
    set("PL-Mean+ERM", 1e-3, 20);
    set("PL-Mean+DRO", 1e-3, 20, 0.25);
    set("PL-MICE+ERM", 1e-3, 30);
    set("PL-MICE+DRO", 1e-3, 30, 0.25);
    set("PL-MF+ERM", 1e-3, 50);
    set("PL-MF+DRO", 1e-3, 50, 0.25);
    return p;
}

namespace {

void apply_method_override(HpProfiles& p, const std::string& method, const json& kv) {
    auto num = [&](const char* key, auto& field) {
        if (kv.contains(key)) field = kv.at(key).template get<std::decay_t<decltype(field)>>();
    };
    if (method == "outcome" || method == "f") {
        num("lr", p.outcome.lr);
        num("epochs", p.outcome.epochs);
        num("batch_size", p.outcome.batch_size);
    } else if (method == "DRUM-Unconstrained") {
        num("lr", p.worstcase.lr);
        num("epochs", p.worstcase.epochs);
        num("q", p.worstcase.q);
        num("L", p.worstcase.L);
        p.fold_generator.unconstrained = p.worstcase;
    } else if (method == "DRUM") {
        num("delta", p.delta);
        num("primal_lr", p.constrained.primal_lr);
        num("dual_lr", p.constrained.dual_lr);
        num("clip", p.constrained.clip);
        num("steps", p.constrained.steps);
        num("L", p.constrained.L);
        num("engression_lr", p.engression.lr);
        num("engression_epochs", p.engression.epochs);
        num("engression_hidden", p.engression.hidden);
        num("noise_dim", p.engression.q);
        num("conditional_steps", p.fold_generator.conditional_steps);
        num("conditional_lr", p.fold_generator.conditional_lr);
    } else if (method == "debias") {
        num("lr_omega", p.density_ratio.lr);
        num("epochs_omega", p.density_ratio.epochs);
        num("m_omega", p.density_ratio.m_omega);
        num("lr_F", p.final_regression.lr);
        num("epochs_F", p.final_regression.epochs);
        num("K", p.K);
        num("L", p.L);
    } else {
        auto it = p.baseline.find(method);
        if (it == p.baseline.end()) throw ConfigError("hp override for unknown method: " + method);
        num("lr", it->second.hp.lr);
        num("epochs", it->second.hp.epochs);
        num("rho", it->second.rho);
        num("batch_size", it->second.hp.batch_size);
    }
}

}  // namespace

void apply_overrides(HpProfiles& profiles, const json& overrides) {
    if (overrides.is_null()) return;
    if (!overrides.is_object()) throw ConfigError("hp overrides must be an object");
    for (const auto& [method, kv] : overrides.items())
        apply_method_override(profiles, method, kv);
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    cfg.setting = j.value("setting", std::string("I"));
    if (j.contains("d_A_values")) cfg.d_A_values = j.at("d_A_values").get<std::vector<int>>();
    if (j.contains("scales")) cfg.scales = j.at("scales").get<std::vector<double>>();
    cfg.mc_count = j.value("mc_count", 100);
    if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
    cfg.seed = j.value("seed", 1ULL);
    cfg.n = j.value("n", 5000L);
    cfg.N = j.value("N", 1000L);
    cfg.out_dir = j.value("out_dir", std::string("out"));
    if (j.contains("hp")) cfg.hp_overrides = j.at("hp");
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["setting"] = cfg.setting;
    j["d_A_values"] = cfg.d_A_values;
    j["scales"] = cfg.scales;
    j["mc_count"] = cfg.mc_count;
    j["methods"] = cfg.methods;
    j["seed"] = cfg.seed;
    j["n"] = cfg.n;
    j["N"] = cfg.N;
    j["out_dir"] = cfg.out_dir;
    j["hp"] = cfg.hp_overrides;
    return j;
}

Vec TrainedMethod::predict(const Mat& X, std::uint64_t eps_key) const {
    if (baseline) return baseline->predict(X);
    if (debiased) return debiased->predict(X);
    if (robust) return core::predict_with_seed(*robust, X, eps_key);
    throw IntegrityError("trained method holds no model");
}

namespace {

void ensure_outcome(DrumStages& stages, const Mat& Xs, const Mat& As, const Vec& Ys,
                    const HpProfiles& p, Task task, std::uint64_t run_seed) {
    if (stages.outcome) return;
    core::OutcomeHp hp = p.outcome;
    hp.seed = stream_key(run_seed, "stage-outcome");
    stages.outcome = core::fit_outcome_model(Xs, As, Ys, hp, task);
}

void ensure_g0(DrumStages& stages, const Mat& Xt, const HpProfiles& p, std::uint64_t run_seed) {
    if (stages.g0_unconstrained) return;
    core::WorstCaseHp hp = p.worstcase;
    hp.seed = stream_key(run_seed, "stage-g0");
    stages.g0_unconstrained = core::fit_worstcase_unconstrained(*stages.outcome, Xt, hp).gen;
}

void ensure_constrained(DrumStages& stages, const Mat& Xs, const Mat& As, const Mat& Xt,
                        const HpProfiles& p, std::uint64_t run_seed) {
    if (stages.g_constrained) return;
    if (!stages.g_source) {
        core::EngressionHp hp = p.engression;
        hp.seed = stream_key(run_seed, "stage-engression");
        auto [gen, baseline_energy] = core::fit_source_engression(Xs, As, hp);
        stages.g_source = std::move(gen);
        stages.baseline_energy = baseline_energy;
    }
    core::ConstrainedHp hp = p.constrained;
    hp.seed = stream_key(run_seed, "stage-constrained");
    stages.budget = core::EnergyBudget{};
    stages.budget.baseline_energy = stages.baseline_energy;
    stages.budget.delta = p.delta;
    stages.g_constrained = core::fit_worstcase_constrained(*stages.outcome, Xs, As, Xt,
                                                           *stages.g_source, stages.budget, hp)
                               .gen;
}

debias::DrumDebiasedHp debias_hp(const HpProfiles& p, std::uint64_t seed) {
    debias::DrumDebiasedHp hp;
    hp.outcome = p.outcome;
    hp.worstcase = p.worstcase;
    hp.engression = p.engression;
    hp.constrained = p.constrained;
    hp.delta = p.delta;
    hp.density_ratio = p.density_ratio;
    hp.fold_generator = p.fold_generator;
    hp.final_regression = p.final_regression;
    hp.K = p.K;
    hp.L = p.L;
    hp.seed = seed;
    return hp;
}

}  // namespace

TrainedMethod train_method(const std::string& canonical, const Mat& source_X, const Mat& source_A,
                           const Vec& source_Y, const Mat& target_X, const HpProfiles& profiles,
                           DrumStages& stages, Task task, std::uint64_t seed) {
    TrainedMethod out;
    out.name = canonical;
    const std::uint64_t mseed = stream_key(seed, canonical);

    auto baseline_hp = [&](const std::string& name) {
        auto it = profiles.baseline.find(name);
        if (it == profiles.baseline.end())
            throw ConfigError("no hyperparameter profile for " + name);
        BaselineProfile bp = it->second;
        bp.hp.seed = mseed;
        return bp;
    };

    if (canonical == "Baseline-ERM") {
        auto bp = baseline_hp(canonical);
        out.baseline = baselines::fit_erm(source_X, source_Y, bp.hp, task);
    } else if (canonical == "Baseline-DRO") {
        auto bp = baseline_hp(canonical);
        out.baseline = baselines::fit_chisq_dro(source_X, source_Y, bp.rho, bp.hp, task);
    } else if (canonical == "IW-KMM") {
        auto bp = baseline_hp(canonical);
        baselines::KmmOptions opts;
        opts.seed = mseed;
        auto w = baselines::kmm_weights(source_X, target_X, opts);
        out.baseline = baselines::fit_weighted_erm(source_X, source_Y, w, bp.hp, task);
    } else if (canonical == "IW-Classify") {
        auto bp = baseline_hp(canonical);
        auto w = baselines::classifier_weights(source_X, target_X);
        out.baseline = baselines::fit_weighted_erm(source_X, source_Y, w, bp.hp, task);
    } else if (canonical.rfind("PL-", 0) == 0) {
        auto bp = baseline_hp(canonical);
        auto plus = canonical.find('+');
        auto imputer = baselines::imputer_from_name(canonical.substr(3, plus - 3));
        auto trainer = canonical.substr(plus + 1) == "DRO" ? baselines::Trainer::chisq_dro
                                                           : baselines::Trainer::erm;
        out.baseline = baselines::fit_pseudolabel(source_X, source_Y, target_X, imputer, trainer,
                                                  bp.rho, bp.hp, task);
    } else if (canonical == "DRUM-Unconstrained") {
        ensure_outcome(stages, source_X, source_A, source_Y, profiles, task, seed);
        ensure_g0(stages, target_X, profiles, seed);
        out.robust = core::RobustPredictor{*stages.outcome, *stages.g0_unconstrained,
                                           profiles.worstcase.L, mseed};
    } else if (canonical == "DRUM") {
        ensure_outcome(stages, source_X, source_A, source_Y, profiles, task, seed);
        ensure_constrained(stages, source_X, source_A, target_X, profiles, seed);
        out.robust = core::RobustPredictor{*stages.outcome, *stages.g_constrained,
                                           profiles.constrained.L, mseed};
    } else if (canonical == "DRUM-Debiased-Unconstrained") {
        ensure_outcome(stages, source_X, source_A, source_Y, profiles, task, seed);
        ensure_g0(stages, target_X, profiles, seed);
        auto hp = debias_hp(profiles, stream_key(seed, "debias-unconstrained"));
        auto result = debias::drum_debiased(source_X, source_A, source_Y, target_X,
                                            core::GenKind::unconstrained, hp, task,
                                            &*stages.outcome, &*stages.g0_unconstrained);
        out.debiased = std::move(result.predictor);
    } else if (canonical == "DRUM-Debiased") {
        ensure_outcome(stages, source_X, source_A, source_Y, profiles, task, seed);
        ensure_constrained(stages, source_X, source_A, target_X, profiles, seed);
        auto hp = debias_hp(profiles, stream_key(seed, "debias-conditional"));
        auto result = debias::drum_debiased(source_X, source_A, source_Y, target_X,
                                            core::GenKind::conditional, hp, task,
                                            &*stages.outcome, &*stages.g_constrained,
                                            &stages.budget);
        out.debiased = std::move(result.predictor);
    } else {
        throw ConfigError("unknown method: " + canonical);
    }
    return out;
}

// ---------------------------------------------------------------------------
// simulate

std::string resolve_output_path(const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return path;
    const char* root = std::getenv("DRUM_OUTPUT_ROOT");
    if (!root || !*root) return path;
    return (fs::path(root) / p).string();
}

std::string cmd_simulate(const std::string& setting, int d_A, std::uint64_t seed, long n, long N,
                         const std::vector<double>& scales, int mc_count,
                         const std::string& out_dir) {
    auto dir = resolve_output_path(out_dir);
    fs::create_directories(dir);
    auto spec = simgen::make_setting(simgen::setting_from_name(setting), seed, d_A);
    spec.n = n;
    spec.N = N;

    auto src = simgen::gen_source(spec);
    dataset::write_labeled_csv(dir + "/source.csv", src.X, src.A, src.Y);
    auto tgt = simgen::gen_target(spec);
    dataset::write_unlabeled_csv(dir + "/target.csv", tgt.X);
    for (double s : scales)
        for (int mc = 0; mc < mc_count; ++mc) {
            auto test = simgen::gen_perturbed_test(spec, s, mc);
            char name[64];
            std::snprintf(name, sizeof(name), "test_s%s_mc%03d.csv", scale_label(s).c_str(), mc);
            dataset::write_labeled_csv(dir + "/" + name, test.X, test.A, test.Y,
                                       &*test.fbar_truth);
        }

    json manifest;
    manifest["setting"] = setting;
    manifest["d_A"] = spec.d_A;
    manifest["seed"] = seed;
    manifest["n"] = n;
    manifest["N"] = N;
    manifest["scales"] = scales;
    manifest["mc_count"] = mc_count;
    write_text_file(dir + "/simulate_manifest.json", manifest.dump(2) + "\n");
    return dir + "/simulate_manifest.json";
}

// ---------------------------------------------------------------------------
// run

std::string cmd_run(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    if (cfg.methods.empty()) throw ConfigError("run: empty method list");
    if (cfg.mc_count < 1) throw ConfigError("run: mc_count must be at least 1");
    for (auto& m : cfg.methods) m = canonical_method(m);

    Setting setting = simgen::setting_from_name(cfg.setting);
    if (cfg.d_A_values.empty()) {
        if (setting == Setting::III)
            cfg.d_A_values = {3, 5, 7, 9};
        else
            cfg.d_A_values = {simgen::make_setting(setting, 0).d_A};
    }
    if (setting == Setting::III && cfg.scales == std::vector<double>{0.6, 1.0, 1.4, 1.8})
        cfg.scales = {1.8};

    const std::string dir = resolve_output_path(cfg.out_dir);
    fs::create_directories(dir + "/metrics");

    json cfg_json = config_to_json(cfg);
    const std::string config_hash = sha256_hex(cfg_json.dump());

    json manifest;
    manifest["config"] = cfg_json;
    manifest["config_hash"] = config_hash;
    manifest["methods"] = json::object();
    json artifacts = json::object();

    const bool multi_dA = cfg.d_A_values.size() > 1;
    // method -> column label -> (worst, mean)
    std::map<std::string, std::map<std::string, std::pair<double, double>>> table;
    std::vector<std::string> column_labels;

    for (int d_A : cfg.d_A_values) {
        auto spec = simgen::make_setting(setting, cfg.seed, d_A);
        spec.n = cfg.n;
        spec.N = cfg.N;
        auto src = simgen::gen_source(spec);
        auto tgt = simgen::gen_target(spec);
        const double var_y = sample_variance(src.Y);

        HpProfiles profiles = default_profiles(setting, d_A);
        apply_overrides(profiles, cfg.hp_overrides);

        DrumStages stages;
        std::vector<TrainedMethod> trained;
        for (const auto& name : cfg.methods) {
            double t0 = now_seconds();
            trained.push_back(train_method(name, src.X, src.A, src.Y, tgt.X, profiles, stages,
                                           Task::regression, cfg.seed));
            json& mm = manifest["methods"][name];
            std::string site = "d_A=" + std::to_string(d_A);
            mm["seed"] = stream_key(cfg.seed, name);
            mm["wall_clock_s"][site] = now_seconds() - t0;
        }

        // evaluation: one test set in memory at a time, all methods scored on it
        std::map<std::string, std::vector<std::vector<double>>> nmse;  // method -> scale -> mc
        for (const auto& name : cfg.methods)
            nmse[name].assign(cfg.scales.size(), std::vector<double>(cfg.mc_count, 0.0));

        for (std::size_t si = 0; si < cfg.scales.size(); ++si) {
            for (int mc = 0; mc < cfg.mc_count; ++mc) {
                auto test = simgen::gen_perturbed_test(spec, cfg.scales[si], mc);
                for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
                    std::uint64_t pk = stream_key(cfg.seed, "predict-" + cfg.methods[mi]);
                    pk = stream_key(pk, "site", static_cast<std::uint64_t>(d_A));
                    pk = stream_key(pk, "scale", si);
                    pk = stream_key(pk, "mc", static_cast<std::uint64_t>(mc));
                    Vec pred = trained[mi].predict(test.X, pk);
                    nmse[cfg.methods[mi]][si][mc] =
                        metrics::normalized_mse(pred, *test.fbar_truth, var_y);
                }
            }
        }

        for (std::size_t si = 0; si < cfg.scales.size(); ++si) {
            std::string label = multi_dA ? "dA" + std::to_string(d_A) + "_s" +
                                               scale_label(cfg.scales[si])
                                         : "s" + scale_label(cfg.scales[si]);
            if (std::find(column_labels.begin(), column_labels.end(), label) ==
                column_labels.end())
                column_labels.push_back(label);
            for (const auto& name : cfg.methods) {
                auto ev = metrics::mc_summarize(nmse[name][si], var_y);
                table[name][label] = {ev.worst, ev.mean};

                json mj;
                mj["method"] = name;
                mj["display"] = display_label(name);
                mj["setting"] = cfg.setting;
                mj["d_A"] = d_A;
                mj["scale"] = cfg.scales[si];
                mj["normalizer_var_y_source"] = var_y;
                mj["per_set"] = ev.per_set;
                mj["worst"] = ev.worst;
                mj["mean"] = ev.mean;
                std::string mpath = dir + "/metrics/" + name + "_" + label + ".json";
                write_text_file(mpath, mj.dump(2) + "\n");
                artifacts["metrics/" + name + "_" + label + ".json"] =
                    sha256_file_hex(mpath);
                manifest["methods"][name]["metrics"][label] =
                    "metrics/" + name + "_" + label + ".json";
            }
        }
        json norm;
        norm["d_A"] = d_A;
        norm["var_y_source"] = var_y;
        manifest["normalizers"].push_back(norm);
    }

    // combined table mirroring the full-results layout: worst block then mean block
    std::string csv = "method";
    for (const auto& l : column_labels) csv += ",worst_" + l;
    for (const auto& l : column_labels) csv += ",mean_" + l;
    csv += "\n";
    for (const auto& name : cfg.methods) {
        csv += display_label(name);
        for (const auto& l : column_labels) csv += "," + format_double(table[name][l].first);
        for (const auto& l : column_labels) csv += "," + format_double(table[name][l].second);
        csv += "\n";
    }
    write_text_file(dir + "/table.csv", csv);
    artifacts["table.csv"] = sha256_file_hex(dir + "/table.csv");

    manifest["artifacts"] = artifacts;
    manifest["artifact_digest"] = sha256_hex(artifacts.dump());
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
    return dir + "/manifest.json";
}

// ---------------------------------------------------------------------------
// fit / predict / evaluate

namespace {

json net_json(const nnet::DenseNet& net) {
    json j;
    nnet::to_json(j, net);
    return j;
}

nnet::DenseNet net_from(const json& j) {
    nnet::DenseNet net;
    nnet::from_json(j, net);
    return net;
}

struct Bundle {
    std::string method;
    Task task = Task::regression;
    dataset::ColumnSchema schema;
    dataset::Standardizer standardizer;
    double var_y_source = 1.0;
    TrainedMethod model;
    json raw;
};

json bundle_to_json(const Bundle& b) {
    json j;
    j["format_version"] = 1;
    j["method"] = b.method;
    j["task"] = b.task == Task::binary ? "binary" : "regression";
    dataset::schema_to_json(j["schema"], b.schema);
    dataset::standardizer_to_json(j["standardizer"], b.standardizer);
    j["var_y_source"] = b.var_y_source;
    if (b.model.baseline) {
        const auto& m = *b.model.baseline;
        j["kind"] = "baseline";
        j["net"] = net_json(m.net);
        j["trainer"] = m.trainer == baselines::Trainer::chisq_dro ? "chisq_dro" : "erm";
        j["rho"] = m.rho;
        j["weighting"] = m.weighting;
        j["imputer"] = m.imputer;
        j["d_X"] = m.d_X;
    } else if (b.model.robust) {
        const auto& m = *b.model.robust;
        j["kind"] = "robust";
        j["outcome_net"] = net_json(m.outcome.net);
        j["generator_net"] = net_json(m.gen.net);
        j["generator_kind"] =
            m.gen.kind == core::GenKind::conditional ? "conditional" : "unconstrained";
        j["q"] = m.gen.q;
        j["L"] = m.L;
        j["prediction_seed"] = m.prediction_seed;
        j["d_X"] = m.outcome.d_X;
        j["d_A"] = m.outcome.d_A;
    } else if (b.model.debiased) {
        const auto& m = *b.model.debiased;
        j["kind"] = "debiased";
        j["net"] = net_json(m.net);
        j["d_X"] = m.d_X;
        j["fold_seed"] = m.fold_seed;
        j["provenance"] = m.provenance;
    } else {
        throw IntegrityError("bundle holds no model");
    }
    return j;
}

Bundle bundle_from_json(const json& j) {
    if (j.at("format_version").get<int>() != 1)
        throw ConfigError("unsupported model bundle format_version");
    Bundle b;
    b.raw = j;
    b.method = j.at("method");
    b.task = j.at("task") == "binary" ? Task::binary : Task::regression;
    b.schema = dataset::schema_from_json(j.at("schema"));
    b.standardizer = dataset::standardizer_from_json(j.at("standardizer"));
    b.var_y_source = j.value("var_y_source", 1.0);
    b.model.name = b.method;
    std::string kind = j.at("kind");
    if (kind == "baseline") {
        baselines::BaselineModel m;
        m.net = net_from(j.at("net"));
        m.trainer = j.at("trainer") == "chisq_dro" ? baselines::Trainer::chisq_dro
                                                   : baselines::Trainer::erm;
        m.rho = j.value("rho", 0.0);
        m.weighting = j.value("weighting", std::string());
        m.imputer = j.value("imputer", std::string());
        m.task = b.task;
        m.d_X = j.at("d_X");
        b.model.baseline = std::move(m);
    } else if (kind == "robust") {
        core::RobustPredictor m;
        m.outcome.net = net_from(j.at("outcome_net"));
        m.outcome.d_X = j.at("d_X");
        m.outcome.d_A = j.at("d_A");
        m.outcome.task = b.task;
        m.gen.net = net_from(j.at("generator_net"));
        m.gen.kind = j.at("generator_kind") == "conditional" ? core::GenKind::conditional
                                                             : core::GenKind::unconstrained;
        m.gen.q = j.at("q");
        m.gen.d_X = m.outcome.d_X;
        m.gen.d_A = m.outcome.d_A;
        m.L = j.at("L");
        m.prediction_seed = j.at("prediction_seed");
        b.model.robust = std::move(m);
    } else if (kind == "debiased") {
        debias::DebiasedPredictor m;
        m.net = net_from(j.at("net"));
        m.task = b.task;
        m.d_X = j.at("d_X");
        m.fold_seed = j.value("fold_seed", 0ULL);
        b.model.debiased = std::move(m);
    } else {
        throw ConfigError("unknown bundle kind: " + kind);
    }
    return b;
}

}  // namespace

std::string cmd_fit(const std::string& source_csv, const std::string& target_csv,
                    const json& schema_json, const std::string& method, const json& hp_overrides,
                    const std::string& out_path, std::uint64_t seed) {
    const std::string canonical = canonical_method(method);
    auto schema = dataset::schema_from_json(schema_json);
    auto source = dataset::read_csv(source_csv, schema, false);
    auto target = dataset::read_csv(target_csv, schema, true);
    if (!source.has_Y) throw ConfigError("fit: source file has no outcome column");
    if (!is_baseline_method(canonical) && !source.has_A)
        throw ConfigError("fit: DRUM methods need structurally missing (a) columns in the source");
    if (source.X.cols() != target.X.cols())
        throw ConfigError("fit: source and target disagree on stable covariates");

    auto standardizer = dataset::fit_standardizer(source.X, source.has_A ? source.A : Mat(0, 0));
    Mat Xs = standardizer.apply_x(source.X);
    Mat Xt = standardizer.apply_x(target.X);
    Mat As = source.has_A ? standardizer.apply_a(source.A) : Mat(source.X.rows(), 0);

    HpProfiles profiles = default_profiles(Setting::I, std::max<int>(1, As.cols()));
    profiles.worstcase.q = 4;
    apply_overrides(profiles, hp_overrides);

    DrumStages stages;
    Bundle b;
    b.method = canonical;
    b.task = schema.task;
    b.schema = schema;
    b.standardizer = standardizer;
    b.var_y_source = sample_variance(source.Y);
    b.model = train_method(canonical, Xs, As, source.Y, Xt, profiles, stages, schema.task, seed);

    json j = bundle_to_json(b);
    j["seed"] = seed;
    j["hp"] = hp_overrides;
    const std::string path = resolve_output_path(out_path);
    if (auto parent = fs::path(path).parent_path(); !parent.empty())
        fs::create_directories(parent);
    write_text_file(path, j.dump(2) + "\n");
    return path;
}

std::string cmd_predict(const std::string& model_path, const std::string& data_csv,
                        const std::string& out_path) {
    Bundle b = bundle_from_json(read_json_file(model_path));
    auto data = dataset::read_csv(data_csv, b.schema, true);
    Mat X = b.standardizer.apply_x(data.X);
    Vec pred = b.model.predict(X, b.raw.value("prediction_seed", 0ULL));
    const std::string path = resolve_output_path(out_path);
    dataset::write_prediction_csv(path, pred);
    return path;
}

namespace {

json ci_json(const metrics::BootstrapCI& ci) {
    json j;
    j["point"] = ci.point;
    j["lo"] = ci.lo;
    j["hi"] = ci.hi;
    j["B"] = ci.B;
    if (ci.paired_p) j["paired_p"] = *ci.paired_p;
    return j;
}

}  // namespace

std::string cmd_evaluate(const std::string& model_path, const std::string& eval_csv,
                         const std::string& out_prefix, long bootstrap_B, std::uint64_t seed,
                         const std::string& paired_model_path) {
    Bundle b = bundle_from_json(read_json_file(model_path));
    auto data = dataset::read_csv(eval_csv, b.schema, false);
    if (!data.has_Y) throw ConfigError("evaluate: file has no outcome column");
    Mat X = b.standardizer.apply_x(data.X);
    Vec pred = b.model.predict(X, b.raw.value("prediction_seed", 0ULL));
    const Vec& y = data.Y;
    const long n = y.size();

    std::optional<Vec> paired_pred;
    if (!paired_model_path.empty()) {
        Bundle b2 = bundle_from_json(read_json_file(paired_model_path));
        auto data2 = dataset::read_csv(eval_csv, b2.schema, false);
        paired_pred = b2.model.predict(b2.standardizer.apply_x(data2.X),
                                       b2.raw.value("prediction_seed", 0ULL));
    }

    auto boot = [&](auto metric_fn, std::uint64_t tag) {
        metrics::RowStat stat = [&, metric_fn](const std::vector<long>& rows) {
            Vec p(rows.size()), t(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                p(i) = pred(rows[i]);
                t(i) = y(rows[i]);
            }
            return metric_fn(p, t);
        };
        if (!paired_pred)
            return metrics::bootstrap(stat, n, bootstrap_B, stream_key(seed, "eval-boot", tag));
        metrics::RowStat ref = [&, metric_fn](const std::vector<long>& rows) {
            Vec p(rows.size()), t(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                p(i) = (*paired_pred)(rows[i]);
                t(i) = y(rows[i]);
            }
            return metric_fn(p, t);
        };
        return metrics::bootstrap(stat, n, bootstrap_B, stream_key(seed, "eval-boot", tag), &ref);
    };

    json report;
    report["method"] = b.method;
    report["n"] = n;
    std::ostringstream text;
    text << "evaluation of " << display_label(b.method) << " on " << eval_csv << " (n=" << n
         << ")\n";

    const std::string prefix = resolve_output_path(out_prefix);
    if (auto parent = fs::path(prefix).parent_path(); !parent.empty())
        fs::create_directories(parent);

    if (b.task == Task::regression) {
        auto mse_fn = [](const Vec& p, const Vec& t) {
            return (p - t).squaredNorm() / static_cast<double>(p.size());
        };
        auto ci = boot(mse_fn, 1);
        report["mse"] = ci_json(ci);
        report["normalized_mse"] = metrics::normalized_mse(pred, y, b.var_y_source);
        report["normalizer_var_y_source"] = b.var_y_source;
        text << "  mse            " << ci.point << "  [" << ci.lo << ", " << ci.hi << "]\n";
        text << "  normalized mse " << metrics::normalized_mse(pred, y, b.var_y_source) << "\n";
    } else {
        auto ci_brier = boot([](const Vec& p, const Vec& t) { return metrics::brier(p, t); }, 1);
        auto ci_ece = boot(
            [](const Vec& p, const Vec& t) { return metrics::ece_quantile(p, t, 10).first; }, 2);
        auto ci_auroc = boot([](const Vec& p, const Vec& t) { return metrics::auroc(p, t); }, 3);
        auto ci_auprc = boot([](const Vec& p, const Vec& t) { return metrics::auprc(p, t); }, 4);
        report["brier"] = ci_json(ci_brier);
        report["ece"] = ci_json(ci_ece);
        report["auroc"] = ci_json(ci_auroc);
        report["auprc"] = ci_json(ci_auprc);
        text << "  brier  " << ci_brier.point << "  [" << ci_brier.lo << ", " << ci_brier.hi
             << "]\n";
        text << "  ece    " << ci_ece.point << "  [" << ci_ece.lo << ", " << ci_ece.hi << "]\n";
        text << "  auroc  " << ci_auroc.point << "  [" << ci_auroc.lo << ", " << ci_auroc.hi
             << "]\n";
        text << "  auprc  " << ci_auprc.point << "  [" << ci_auprc.lo << ", " << ci_auprc.hi
             << "]\n";

        json cutoffs = json::object();
        for (double t : {0.03, 0.05, 0.10, 0.15}) {
            auto r = metrics::fixed_cutoff(pred, y, t);
            json cj;
            cj["f1"] = r.f1;
            cj["precision"] = r.precision;
            cj["recall"] = r.recall;
            cj["specificity"] = r.specificity;
            cutoffs[format_double(t)] = cj;
            text << "  cutoff " << t << ": f1 " << r.f1 << " precision " << r.precision
                 << " recall " << r.recall << " specificity " << r.specificity << "\n";
        }
        report["fixed_cutoffs"] = cutoffs;

        auto [ece, points] = metrics::ece_quantile(pred, y, 10);
        std::string cal = "mean_pred,observed,count\n";
        for (const auto& pt : points)
            cal += format_double(pt.mean_pred) + "," + format_double(pt.observed) + "," +
                   std::to_string(pt.count) + "\n";
        write_text_file(prefix + "_calibration.csv", cal);
    }
    write_text_file(prefix + ".json", report.dump(2) + "\n");
    write_text_file(prefix + ".txt", text.str());
    return prefix + ".json";
}

// ---------------------------------------------------------------------------
// grid

std::string cmd_grid(const json& grid_config, const std::string& out_dir) {
    if (!grid_config.contains("method")) throw ConfigError("grid: missing method");
    if (!grid_config.contains("grid") || grid_config.at("grid").empty())
        throw ConfigError("grid: empty grid");
    const std::string method = canonical_method(grid_config.at("method"));
    const std::uint64_t seed = grid_config.value("seed", 1ULL);
    const double val_fraction = grid_config.value("val_fraction", 0.2);

    Mat Xs, As, Xt;
    Vec Ys;
    Task task = Task::regression;
    Setting setting = Setting::I;
    int d_A = 5;
    if (grid_config.contains("setting")) {
        setting = simgen::setting_from_name(grid_config.at("setting"));
        d_A = grid_config.value("d_A", simgen::make_setting(setting, 0).d_A);
        auto spec = simgen::make_setting(setting, seed, d_A);
        spec.n = grid_config.value("n", 5000L);
        spec.N = grid_config.value("N", 1000L);
        auto src = simgen::gen_source(spec);
        Xs = src.X;
        As = src.A;
        Ys = src.Y;
        Xt = simgen::gen_target(spec).X;
    } else {
        auto schema = dataset::schema_from_json(grid_config.at("schema"));
        task = schema.task;
        auto src = dataset::read_csv(grid_config.at("source"), schema, false);
        auto tgt = dataset::read_csv(grid_config.at("target"), schema, true);
        auto std_ = dataset::fit_standardizer(src.X, src.has_A ? src.A : Mat(0, 0));
        Xs = std_.apply_x(src.X);
        As = src.has_A ? std_.apply_a(src.A) : Mat(src.X.rows(), 0);
        Ys = src.Y;
        Xt = std_.apply_x(tgt.X);
        d_A = static_cast<int>(As.cols());
    }

    // 80/20 split of the source by seed
    const long n = Xs.rows();
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, "grid-split");
    rng.shuffle(order);
    long n_val = static_cast<long>(std::llround(val_fraction * static_cast<double>(n)));
    n_val = std::max<long>(1, std::min(n - 1, n_val));
    std::vector<long> val_idx(order.begin(), order.begin() + n_val);
    std::vector<long> train_idx(order.begin() + n_val, order.end());

    auto take_rows = [](const Mat& m, const std::vector<long>& idx) {
        Mat out(static_cast<long>(idx.size()), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = m.row(idx[i]);
        return out;
    };
    Mat Xtr = take_rows(Xs, train_idx), Xval = take_rows(Xs, val_idx);
    Mat Atr = As.cols() > 0 ? take_rows(As, train_idx) : Mat(Xtr.rows(), 0);
    Vec Ytr(train_idx.size()), Yval(val_idx.size());
    for (std::size_t i = 0; i < train_idx.size(); ++i) Ytr(i) = Ys(train_idx[i]);
    for (std::size_t i = 0; i < val_idx.size(); ++i) Yval(i) = Ys(val_idx[i]);

    // cartesian product of the grid
    std::vector<std::pair<std::string, json>> axes;
    for (const auto& [key, values] : grid_config.at("grid").items()) {
        if (!values.is_array() || values.empty())
            throw ConfigError("grid: axis " + key + " must be a non-empty array");
        axes.emplace_back(key, values);
    }
    std::vector<json> cells{json::object()};
    for (const auto& [key, values] : axes) {
        std::vector<json> next;
        for (const auto& cell : cells)
            for (const auto& v : values) {
                json c = cell;
                c[key] = v;
                next.push_back(c);
            }
        cells = std::move(next);
    }

    json all_cells = json::array();
    double best_loss = std::numeric_limits<double>::infinity();
    json best_cell;
    std::string csv = "cell,val_loss\n";
    for (const auto& cell : cells) {
        HpProfiles profiles = default_profiles(setting, d_A);
        json overrides;
        overrides[method] = cell;
        if (grid_config.contains("hp"))
            for (const auto& [k, v] : grid_config.at("hp").items()) overrides[k] = v;
        apply_overrides(profiles, overrides);

        DrumStages stages;
        auto trained =
            train_method(method, Xtr, Atr, Ytr, Xt, profiles, stages, task, seed);
        Vec pred = trained.predict(Xval, stream_key(seed, "grid-val-eps"));
        double loss = task == Task::binary
                          ? metrics::brier(pred.cwiseMax(0.0).cwiseMin(1.0), Yval)
                          : (pred - Yval).squaredNorm() / static_cast<double>(Yval.size());
        json rec;
        rec["params"] = cell;
        rec["val_loss"] = loss;
        all_cells.push_back(rec);
        csv += cell.dump() + "," + format_double(loss) + "\n";
        if (loss < best_loss) {
            best_loss = loss;
            best_cell = cell;
        }
    }

    const std::string dir = resolve_output_path(out_dir);
    fs::create_directories(dir);
    json manifest;
    manifest["method"] = method;
    manifest["seed"] = seed;
    manifest["val_fraction"] = val_fraction;
    manifest["criterion"] = task == Task::binary ? "brier" : "mse";
    manifest["cells"] = all_cells;
    manifest["best"] = {{"params", best_cell}, {"val_loss", best_loss}};
    write_text_file(dir + "/grid_manifest.json", manifest.dump(2) + "\n");
    write_text_file(dir + "/grid_cells.csv", csv);
    return dir + "/grid_manifest.json";
}

// ---------------------------------------------------------------------------
// report

std::string cmd_report(const std::vector<std::string>& manifest_paths,
                       const std::string& out_dir) {
    if (manifest_paths.empty()) throw ConfigError("report: no manifests given");
    std::vector<json> manifests;
    for (const auto& p : manifest_paths) manifests.push_back(read_json_file(p));

    auto strip_seed = [](json cfg) {
        cfg.erase("seed");
        cfg.erase("out_dir");
        return cfg;
    };
    const json base_cfg = strip_seed(manifests.front().at("config"));
    for (const auto& m : manifests)
        if (strip_seed(m.at("config")) != base_cfg)
            throw ConfigError(
                "report: incompatible manifests (different settings/normalizers cannot merge)");

    const auto methods = base_cfg.at("methods").get<std::vector<std::string>>();
    const auto scales = base_cfg.at("scales").get<std::vector<double>>();
    const auto d_A_values = base_cfg.at("d_A_values").get<std::vector<int>>();
    const bool multi_dA = d_A_values.size() > 1;

    // axis value -> method -> values across manifests (per statistic)
    struct Cell {
        std::vector<double> worst, mean;
    };
    std::map<std::string, std::map<std::string, Cell>> grid;
    std::vector<std::string> axis_labels;

    for (const auto& mpath : manifest_paths) {
        json m = read_json_file(mpath);
        fs::path dir = fs::path(mpath).parent_path();
        for (int d_A : d_A_values)
            for (double s : scales) {
                std::string label = multi_dA ? "dA" + std::to_string(d_A) + "_s" + scale_label(s)
                                             : "s" + scale_label(s);
                std::string axis = multi_dA ? std::to_string(d_A) : scale_label(s);
                if (std::find(axis_labels.begin(), axis_labels.end(), axis) == axis_labels.end())
                    axis_labels.push_back(axis);
                for (const auto& name : methods) {
                    auto rel = m.at("methods").at(name).at("metrics").at(label).get<std::string>();
                    json mj = read_json_file((dir / rel).string());
                    grid[axis][name].worst.push_back(mj.at("worst"));
                    grid[axis][name].mean.push_back(mj.at("mean"));
                }
            }
    }

    const bool multi_seed = manifest_paths.size() > 1;
    auto emit = [&](const char* stat) {
        std::string axis_name = multi_dA ? "d_A" : "scale";
        std::string csv = axis_name;
        for (const auto& name : methods) {
            csv += "," + display_label(name);
            if (multi_seed) csv += "," + display_label(name) + " (min)," +
                                   display_label(name) + " (max)";
        }
        csv += ",Best baseline\n";
        for (const auto& axis : axis_labels) {
            csv += axis;
            double best_baseline = std::numeric_limits<double>::infinity();
            for (const auto& name : methods) {
                const auto& vals = std::string(stat) == "worst" ? grid[axis][name].worst
                                                                : grid[axis][name].mean;
                double mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                              static_cast<double>(vals.size());
                csv += "," + format_double(mean);
                if (multi_seed) {
                    csv += "," + format_double(*std::min_element(vals.begin(), vals.end()));
                    csv += "," + format_double(*std::max_element(vals.begin(), vals.end()));
                }
                if (is_baseline_method(name)) best_baseline = std::min(best_baseline, mean);
            }
            csv += "," + (std::isfinite(best_baseline) ? format_double(best_baseline)
                                                       : std::string("nan"));
            csv += "\n";
        }
        return csv;
    };

    const std::string dir = resolve_output_path(out_dir);
    fs::create_directories(dir);
    write_text_file(dir + "/worst_mse.csv", emit("worst"));
    write_text_file(dir + "/mean_mse.csv", emit("mean"));
    json summary;
    summary["manifests"] = manifest_paths;
    summary["seeds"] = json::array();
    for (const auto& m : manifests) summary["seeds"].push_back(m.at("config").at("seed"));
    write_text_file(dir + "/report_manifest.json", summary.dump(2) + "\n");
    return dir + "/report_manifest.json";
}

}  // namespace drum::harness
