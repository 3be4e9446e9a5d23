#pragma once

#include "drum/baselines.hpp"
#include "drum/common.hpp"
#include "drum/dataset.hpp"
#include "drum/debias.hpp"
#include "drum/drumcore.hpp"
#include "drum/metrics.hpp"
#include "drum/simgen.hpp"

#include <map>
#include <nlohmann/json.hpp>
#include <optional>

namespace drum::harness {

using nlohmann::json;

// Canonical method names; the four DRUM variants also answer to the paper-style
// parenthesized labels.
const std::vector<std::string>& canonical_methods();
bool is_baseline_method(const std::string& canonical);
std::string canonical_method(const std::string& name_or_alias);
std::string display_label(const std::string& canonical);

struct BaselineProfile {
    baselines::BaselineHp hp;
    double rho = 0.25;  // DRO-family methods
};

// Paper-default hyperparameters per setting; cmd_run reproduces results with
// zero tuning. Overrides come in as {"method": {"key": value}} maps.
struct HpProfiles {
    core::OutcomeHp outcome;
    core::WorstCaseHp worstcase;
    core::EngressionHp engression;
    core::ConstrainedHp constrained;
    double delta = 0.3;
    debias::DensityRatioHp density_ratio;
    debias::FinalRegressionHp final_regression;
    debias::DebiasedGenHp fold_generator;
    int K = 3;
    int L = 256;
    std::map<std::string, BaselineProfile> baseline;
};

HpProfiles default_profiles(simgen::Setting setting, int d_A);
void apply_overrides(HpProfiles& profiles, const json& overrides);

struct ExperimentConfig {
    std::string setting = "I";
    std::vector<int> d_A_values;          // Setting III sweep; single entry otherwise
    std::vector<double> scales = {0.6, 1.0, 1.4, 1.8};
    int mc_count = 100;
    std::vector<std::string> methods;     // canonical names
    std::uint64_t seed = 1;
    long n = 5000, N = 1000;
    std::string out_dir = "out";
    json hp_overrides = json::object();
};

ExperimentConfig config_from_json(const json& j);
json config_to_json(const ExperimentConfig& cfg);

// Trained predictor of any family behind one call.
struct TrainedMethod {
    std::string name;
    std::optional<baselines::BaselineModel> baseline;
    std::optional<core::RobustPredictor> robust;
    std::optional<debias::DebiasedPredictor> debiased;

    Vec predict(const Mat& X, std::uint64_t eps_key) const;
};

// Stages shared across DRUM variants within one run (each trains once).
struct DrumStages {
    std::optional<core::OutcomeModel> outcome;
    std::optional<core::Generator> g0_unconstrained;
    std::optional<core::Generator> g_source;
    double baseline_energy = 0.0;
    std::optional<core::Generator> g_constrained;
    core::EnergyBudget budget;
};

TrainedMethod train_method(const std::string& canonical, const Mat& source_X,
                           const Mat& source_A, const Vec& source_Y, const Mat& target_X,
                           const HpProfiles& profiles, DrumStages& stages, Task task,
                           std::uint64_t seed);

// Subcommands. Each returns the path of its primary artifact.
std::string cmd_simulate(const std::string& setting, int d_A, std::uint64_t seed, long n, long N,
                         const std::vector<double>& scales, int mc_count,
                         const std::string& out_dir);

std::string cmd_run(const ExperimentConfig& cfg);

std::string cmd_fit(const std::string& source_csv, const std::string& target_csv,
                    const json& schema_json, const std::string& method, const json& hp_overrides,
                    const std::string& out_path, std::uint64_t seed);

std::string cmd_predict(const std::string& model_path, const std::string& data_csv,
                        const std::string& out_path);

std::string cmd_evaluate(const std::string& model_path, const std::string& eval_csv,
                         const std::string& out_prefix, long bootstrap_B, std::uint64_t seed,
                         const std::string& paired_model_path = "");

std::string cmd_grid(const json& grid_config, const std::string& out_dir);

std::string cmd_report(const std::vector<std::string>& manifest_paths,
                       const std::string& out_dir);

// Resolves a path against DRUM_OUTPUT_ROOT when it is relative.
std::string resolve_output_path(const std::string& path);

}  // namespace drum::harness
