#include "drum/common.hpp"
#include "drum/harness.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace {

using drum::harness::json;

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw drum::ConfigError("cannot open config: " + path);
    return json::parse(in);
}

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config file; flags override its keys");
        app->add_option("--seed", seed, "run seed")->each([this](const std::string&) {
            seed_set = true;
        });
        app->add_option("--threads", threads, "worker threads (default: hardware)");
    }

    json resolve() const {
        if (threads > 0) drum::set_thread_count(threads);
        return load_config(config_path);
    }
};

}  // namespace

int main(int argc, char** argv) {
    if (openblas_set_num_threads) openblas_set_num_threads(1);

    CLI::App app{"drum: distributionally robust unsupervised transfer learning"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "write simulated source/target/test CSVs");
    Common sim_c;
    sim_c.attach(sim);
    std::string sim_setting = "I", sim_out = "sim";
    int sim_dA = -1, sim_mc = 100;
    long sim_n = 5000, sim_N = 1000;
    std::vector<double> sim_scales = {0.6, 1.0, 1.4, 1.8};
    sim->add_option("--setting", sim_setting, "I, II, or III");
    sim->add_option("--d-a", sim_dA, "d_A (Setting III)");
    sim->add_option("--n", sim_n, "source rows");
    sim->add_option("--target-n", sim_N, "target rows");
    sim->add_option("--scales", sim_scales, "perturbation scales");
    sim->add_option("--mc", sim_mc, "Monte-Carlo test sets per scale");
    sim->add_option("--out", sim_out, "output directory");

    // run
    auto* run = app.add_subcommand("run", "train methods and evaluate over MC test sets");
    Common run_c;
    run_c.attach(run);
    std::string run_out;
    std::vector<std::string> run_methods;
    run->add_option("--out", run_out, "output directory (overrides config)");
    run->add_option("--methods", run_methods, "methods (overrides config)");

    // fit
    auto* fit = app.add_subcommand("fit", "fit one method on source/target CSVs");
    Common fit_c;
    fit_c.attach(fit);
    std::string fit_source, fit_target, fit_schema, fit_method, fit_out = "model.json";
    fit->add_option("--source", fit_source, "labeled source CSV")->required();
    fit->add_option("--target", fit_target, "unlabeled target CSV")->required();
    fit->add_option("--schema", fit_schema, "schema JSON file")->required();
    fit->add_option("--method", fit_method, "method name")->required();
    fit->add_option("--out", fit_out, "model bundle path");

    // predict
    auto* pred = app.add_subcommand("predict", "predict with a fitted model bundle");
    Common pred_c;
    pred_c.attach(pred);
    std::string pred_model, pred_data, pred_out = "pred.csv";
    pred->add_option("--model", pred_model, "model bundle")->required();
    pred->add_option("--data", pred_data, "covariate CSV")->required();
    pred->add_option("--out", pred_out, "prediction CSV path");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "score a model on a labeled CSV");
    Common eval_c;
    eval_c.attach(eval);
    std::string eval_model, eval_data, eval_out = "report", eval_paired;
    long eval_B = 2000;
    eval->add_option("--model", eval_model, "model bundle")->required();
    eval->add_option("--data", eval_data, "labeled CSV")->required();
    eval->add_option("--out", eval_out, "output prefix");
    eval->add_option("--bootstrap", eval_B, "bootstrap resamples");
    eval->add_option("--paired-with", eval_paired, "second bundle for paired comparison");

    // grid
    auto* grid = app.add_subcommand("grid", "hyperparameter grid search");
    Common grid_c;
    grid_c.attach(grid);
    std::string grid_out = "grid";
    grid->add_option("--out", grid_out, "output directory");

    // report
    auto* rep = app.add_subcommand("report", "merge run manifests into plot-ready tables");
    Common rep_c;
    rep_c.attach(rep);
    std::string rep_out = "report";
    std::vector<std::string> rep_manifests;
    rep->add_option("--out", rep_out, "output directory");
    rep->add_option("manifests", rep_manifests, "run manifest files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) {
            json cfg = sim_c.resolve();
            std::uint64_t seed = sim_c.seed_set ? sim_c.seed : cfg.value("seed", 1ULL);
            auto path = drum::harness::cmd_simulate(sim_setting, sim_dA, seed, sim_n, sim_N,
                                                    sim_scales, sim_mc, sim_out);
            std::printf("%s\n", path.c_str());
        } else if (*run) {
            json cfg_json = run_c.resolve();
            auto cfg = drum::harness::config_from_json(cfg_json);
            if (run_c.seed_set) cfg.seed = run_c.seed;
            if (!run_out.empty()) cfg.out_dir = run_out;
            if (!run_methods.empty()) cfg.methods = run_methods;
            auto path = drum::harness::cmd_run(cfg);
            std::printf("%s\n", path.c_str());
        } else if (*fit) {
            json cfg = fit_c.resolve();
            std::uint64_t seed = fit_c.seed_set ? fit_c.seed : cfg.value("seed", 1ULL);
            json schema = load_config(fit_schema);
            json hp = cfg.value("hp", json::object());
            auto path = drum::harness::cmd_fit(fit_source, fit_target, schema, fit_method, hp,
                                               fit_out, seed);
            std::printf("%s\n", path.c_str());
        } else if (*pred) {
            pred_c.resolve();
            auto path = drum::harness::cmd_predict(pred_model, pred_data, pred_out);
            std::printf("%s\n", path.c_str());
        } else if (*eval) {
            json cfg = eval_c.resolve();
            std::uint64_t seed = eval_c.seed_set ? eval_c.seed : cfg.value("seed", 1ULL);
            auto path = drum::harness::cmd_evaluate(eval_model, eval_data, eval_out, eval_B, seed,
                                                    eval_paired);
            std::printf("%s\n", path.c_str());
        } else if (*grid) {
            json cfg = grid_c.resolve();
            if (grid_c.seed_set) cfg["seed"] = grid_c.seed;
            auto path = drum::harness::cmd_grid(cfg, grid_out);
            std::printf("%s\n", path.c_str());
        } else if (*rep) {
            rep_c.resolve();
            auto path = drum::harness::cmd_report(rep_manifests, rep_out);
            std::printf("%s\n", path.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
