#include "drum/simgen.hpp"
#include "drum/rng.hpp"

#include <cmath>

namespace drum::simgen {

namespace {

// First 10 rows shared by Settings I and II; Setting I zeroes rows 11-15.
constexpr double kBTop[10][5] = {
    {1.0, 0.5, 0.3, 0.2, 0.1},
    {0.8, 1.0, 0.4, 0.1, 0.2},
    {0.5, 0.3, 1.0, 0.5, 0.3},
    {0.3, 0.2, 0.6, 1.0, 0.4},
    {0.2, 0.4, 0.2, 0.3, 1.0},
    {0.1, 0.1, 0.3, 0.2, 0.5},
    {0.0, 0.2, 0.1, 0.4, 0.3},
    {0.1, 0.0, 0.2, 0.1, 0.2},
    {0.0, 0.2, 0.0, 0.2, 0.1},
    {0.0, 0.3, 0.0, 0.0, 0.1}};

constexpr double kBTailII[5][5] = {
    {0.3, 0.2, 0.2, 0.0, 0.4},
    {0.1, 0.4, 0.0, 0.3, 0.1},
    {0.0, 0.2, 0.3, 0.1, 0.2},
    {0.2, 0.0, 0.1, 0.4, 0.0},
    {0.1, 0.3, 0.2, 0.0, 0.3}};

// Appendix prints 16 rows for d_X = 15; the all-zero last row is dropped.
constexpr double kBIII[15][10] = {
    {1.0, 0.5, 0.3, 0.2, 0.1, 0.4, 0.2, 0.1, 0.3, 0.2},
    {0.4, 1.0, 0.4, 0.1, 0.2, 0.3, 0.5, 0.2, 0.1, 0.1},
    {0.5, 0.3, 1.0, 0.5, 0.3, 0.2, 0.1, 0.4, 0.2, 0.3},
    {0.3, 0.2, 0.6, 1.0, 0.4, 0.1, 0.3, 0.5, 0.1, 0.2},
    {0.2, 0.4, 0.2, 0.3, 1.0, 0.3, 0.2, 0.1, 0.5, 0.4},
    {0.1, 0.1, 0.3, 0.2, 0.5, 1.0, 0.4, 0.3, 0.2, 0.1},
    {0.0, 0.2, 0.1, 0.4, 0.3, 0.3, 1.0, 0.2, 0.4, 0.2},
    {0.1, 0.0, 0.2, 0.1, 0.2, 0.2, 0.3, 1.0, 0.1, 0.3},
    {0.0, 0.2, 0.0, 0.2, 0.1, 0.1, 0.2, 0.3, 1.0, 0.2},
    {0.0, 0.3, 0.0, 0.0, 0.1, 0.2, 0.1, 0.2, 0.3, 1.0},
    {0.3, 0.2, 0.2, 0.0, 0.4, 0.1, 0.0, 0.1, 0.2, 0.3},
    {0.1, 0.4, 0.0, 0.3, 0.1, 0.2, 0.1, 0.0, 0.1, 0.2},
    {0.0, 0.2, 0.3, 0.1, 0.2, 0.0, 0.2, 0.1, 0.0, 0.1},
    {0.2, 0.0, 0.1, 0.4, 0.0, 0.1, 0.0, 0.2, 0.1, 0.0},
    {0.1, 0.3, 0.2, 0.0, 0.3, 0.0, 0.1, 0.0, 0.2, 0.1}};

Mat normal_matrix(Rng& rng, long rows, long cols, double mean = 0.0, double sd = 1.0) {
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.normal(mean, sd);
    return m;
}

}  // namespace

Setting setting_from_name(const std::string& name) {
    if (name == "I" || name == "1") return Setting::I;
    if (name == "II" || name == "2") return Setting::II;
    if (name == "III" || name == "3") return Setting::III;
    throw ConfigError("unknown setting: " + name);
}

std::string setting_name(Setting s) {
    switch (s) {
        case Setting::I: return "I";
        case Setting::II: return "II";
        case Setting::III: return "III";
    }
    return "?";
}

SettingSpec make_setting(Setting s, std::uint64_t seed, int d_A) {
    SettingSpec spec;
    spec.setting = s;
    spec.seed = seed;
    switch (s) {
        case Setting::I:
            spec.d_A = 5;
            spec.sigma_noise = 0.8;
            break;
        case Setting::II:
            spec.d_A = 2;
            spec.sigma_noise = 0.3;
            break;
        case Setting::III:
            spec.d_A = d_A > 0 ? d_A : 5;
            spec.sigma_noise = 0.3;
            break;
    }
    if (d_A > 0) spec.d_A = d_A;
    coeff_matrix(spec.setting, spec.d_A);  // validates the combination
    return spec;
}

Mat coeff_matrix(Setting s, int d_A) {
    switch (s) {
        case Setting::I: {
            if (d_A != 5) throw ConfigError("Setting I is defined for d_A = 5");
            Mat b = Mat::Zero(15, 5);
            for (int i = 0; i < 10; ++i)
                for (int j = 0; j < 5; ++j) b(i, j) = kBTop[i][j];
            return b;
        }
        case Setting::II: {
            if (d_A != 2) throw ConfigError("Setting II is defined for d_A = 2");
            Mat b(15, 2);
            for (int i = 0; i < 10; ++i)
                for (int j = 0; j < 2; ++j) b(i, j) = kBTop[i][j];
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 2; ++j) b(10 + i, j) = kBTailII[i][j];
            return b;
        }
        case Setting::III: {
            if (d_A != 3 && d_A != 5 && d_A != 7 && d_A != 9)
                throw ConfigError("Setting III is defined for d_A in {3,5,7,9}");
            Mat b(15, d_A);
            for (int i = 0; i < 15; ++i)
                for (int j = 0; j < d_A; ++j) b(i, j) = kBIII[i][j];
            return b;
        }
    }
    throw ConfigError("bad setting");
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double fbar_eval(Setting s, const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& a) {
    const int d_A = static_cast<int>(a.size());
    double v = 0.0;
    for (int j = 0; j < d_A; ++j) v += 0.1 * a(j) + 0.1 * a(j) * a(j);
    for (int i = 0; i < d_A; ++i) v += 0.1 * x(i) * a(i);
    if (d_A >= 2) v += 0.3 * (x(0) * a(1) + x(1) * a(0));
    for (int i = 0; i < d_A; ++i) v += 0.2 * sign0(a(i)) * x(i) * x(i);
    if (s == Setting::II || s == Setting::III)
        for (int i = 0; i < d_A; ++i) v += 0.5 * std::tanh(x(i)) * a(i);
    return v;
}

Vec fbar_eval_rows(Setting s, const Mat& X, const Mat& A) {
    if (X.rows() != A.rows()) throw InputError("fbar_eval_rows: row count mismatch");
    Vec out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = fbar_eval(s, X.row(i), A.row(i));
    return out;
}

Mat conditional_A(Setting s, const Mat& B, const Mat& X, const Mat& eps) {
    const long n = X.rows();
    const int d_X = static_cast<int>(X.cols());
    const int d_A = static_cast<int>(B.cols());
    Mat A = X * B + eps;
    if (s == Setting::II || s == Setting::III) {
        const int inter = std::min(5, d_X - 1);
        const int signq = std::min(5, d_X);
        for (long r = 0; r < n; ++r)
            for (int j = 0; j < d_A; ++j) {
                double add = 0.0;
                for (int i = 0; i < inter; ++i) add += 0.1 * B(i, j) * X(r, i) * X(r, i + 1);
                for (int i = 0; i < signq; ++i)
                    add += 0.1 * B(i, j) * sign0(X(r, i)) * X(r, i) * X(r, i);
                A(r, j) += add;
            }
    }
    return A;
}

LabeledSet gen_source(const SettingSpec& spec) {
    Rng rx(spec.seed, "source-X");
    Rng reps(spec.seed, "source-Aeps");
    Rng ry(spec.seed, "source-Ynoise");
    LabeledSet out;
    out.X = normal_matrix(rx, spec.n, spec.d_X);
    Mat B = coeff_matrix(spec.setting, spec.d_A);
    Mat eps = normal_matrix(reps, spec.n, spec.d_A, 0.0, spec.sigma_noise);
    out.A = conditional_A(spec.setting, B, out.X, eps);
    out.Y = fbar_eval_rows(spec.setting, out.X, out.A);
    for (long i = 0; i < spec.n; ++i) out.Y(i) += ry.normal(0.0, spec.outcome_noise_sd);
    return out;
}

UnlabeledSet gen_target(const SettingSpec& spec) {
    Rng rx(spec.seed, "target-X");
    UnlabeledSet out;
    out.X = normal_matrix(rx, spec.N, spec.d_X, 0.1, 1.1);
    return out;
}

LabeledSet gen_perturbed_test(const SettingSpec& spec, double s, std::uint64_t mc_index) {
    if (s < 0.0) throw ConfigError("perturbation scale must be non-negative");
    Rng ru(spec.seed, "test-perturb", mc_index);
    Rng rx(spec.seed, "test-X", mc_index);
    Rng reps(spec.seed, "test-Aeps", mc_index);
    Rng ry(spec.seed, "test-Ynoise", mc_index);

    Mat B = coeff_matrix(spec.setting, spec.d_A);
    for (Eigen::Index k = 0; k < B.rows(); ++k)
        for (Eigen::Index l = 0; l < B.cols(); ++l) B(k, l) *= ru.uniform(-s, s);

    LabeledSet out;
    out.X = normal_matrix(rx, spec.N, spec.d_X, 0.1, 1.1);
    Mat eps = normal_matrix(reps, spec.N, spec.d_A, 0.0, spec.sigma_noise);
    out.A = conditional_A(spec.setting, B, out.X, eps);
    Vec truth = fbar_eval_rows(spec.setting, out.X, out.A);
    out.Y = truth;
    for (long i = 0; i < spec.N; ++i) out.Y(i) += ry.normal(0.0, spec.outcome_noise_sd);
    out.fbar_truth = std::move(truth);
    return out;
}

}  // namespace drum::simgen
