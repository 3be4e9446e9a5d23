#pragma once

#include "drum/common.hpp"

#include <optional>

namespace drum::simgen {

enum class Setting { I, II, III };

Setting setting_from_name(const std::string& name);
std::string setting_name(Setting s);

struct SettingSpec {
    Setting setting = Setting::I;
    int d_X = 15;
    int d_A = 5;
    long n = 5000;        // source size
    long N = 1000;        // target size
    double sigma_noise = 0.8;
    double outcome_noise_sd = 0.05;
    std::uint64_t seed = 0;
};

// Paper defaults: (I, d_A=5, sigma 0.8), (II, d_A=2, sigma 0.3), (III, d_A in {3,5,7,9}, sigma 0.3).
SettingSpec make_setting(Setting s, std::uint64_t seed, int d_A = -1);

// The literal appendix coefficient matrix, d_X x d_A. Setting III truncates to the
// first d_A columns. Throws ConfigError for combinations the paper does not define.
Mat coeff_matrix(Setting s, int d_A);

double sign0(double v);  // sign with sign(0) = 0

double fbar_eval(Setting s, const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& a);
Vec fbar_eval_rows(Setting s, const Mat& X, const Mat& A);

struct LabeledSet {
    Mat X;
    Mat A;
    Vec Y;
    std::optional<Vec> fbar_truth;  // noiseless outcomes, test sets only
};

struct UnlabeledSet {
    Mat X;
};

// A | X = x under the setting's conditional law with coefficient matrix B and fresh
// noise rows eps (n x d_A). Settings II/III use B in the nonlinear terms as well.
Mat conditional_A(Setting s, const Mat& B, const Mat& X, const Mat& eps);

LabeledSet gen_source(const SettingSpec& spec);
UnlabeledSet gen_target(const SettingSpec& spec);

// One Monte-Carlo perturbed test set: B~ = B .* U with U_kl ~ Uniform(-s, s),
// X regenerated from the target law, fbar_truth stored noiseless.
LabeledSet gen_perturbed_test(const SettingSpec& spec, double s, std::uint64_t mc_index);

}  // namespace drum::simgen
