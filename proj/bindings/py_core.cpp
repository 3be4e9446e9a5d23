#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "drum/baselines.hpp"
#include "drum/common.hpp"
#include "drum/debias.hpp"
#include "drum/drumcore.hpp"
#include "drum/harness.hpp"
#include "drum/metrics.hpp"
#include "drum/nnet.hpp"
#include "drum/simgen.hpp"

#include <nlohmann/json.hpp>

namespace py = pybind11;
using namespace drum;

namespace {

simgen::SettingSpec make_spec(const std::string& setting, std::uint64_t seed, int d_A, long n,
                              long N) {
    auto spec = simgen::make_setting(simgen::setting_from_name(setting), seed, d_A);
    if (n > 0) spec.n = n;
    if (N > 0) spec.N = N;
    return spec;
}

nnet::LossSpec loss_by_name(const std::string& name, const Vec* weights) {
    nnet::LossSpec loss;
    if (name == "mse") loss.kind = nnet::LossKind::mse;
    else if (name == "bce") loss.kind = nnet::LossKind::bce;
    else if (name == "weighted_mse") {
        loss.kind = nnet::LossKind::weighted_mse;
        loss.weights = weights;
    } else throw ConfigError("unknown loss: " + name);
    return loss;
}

std::vector<nnet::Activation> acts_by_name(const std::vector<std::string>& names) {
    std::vector<nnet::Activation> acts;
    for (const auto& n : names) {
        if (n == "relu") acts.push_back(nnet::Activation::relu);
        else if (n == "identity") acts.push_back(nnet::Activation::identity);
        else if (n == "sigmoid") acts.push_back(nnet::Activation::sigmoid);
        else throw ConfigError("unknown activation: " + n);
    }
    return acts;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "DRUM core bindings: simulation, networks, estimators, metrics, harness";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<InputError>(m, "InputError");
    py::register_exception<DivergenceError>(m, "DivergenceError");

    m.def("set_thread_count", &set_thread_count);
    m.def("thread_count", &thread_count);

    // --- simulation -------------------------------------------------------
    m.def(
        "coeff_matrix",
        [](const std::string& setting, int d_A) -> Mat {
            return simgen::coeff_matrix(simgen::setting_from_name(setting), d_A);
        },
        py::arg("setting"), py::arg("d_a"));
    m.def(
        "fbar_eval",
        [](const std::string& setting, const Vec& x, const Vec& a) {
            return simgen::fbar_eval(simgen::setting_from_name(setting), x, a);
        },
        py::arg("setting"), py::arg("x"), py::arg("a"));
    m.def(
        "gen_source",
        [](const std::string& setting, std::uint64_t seed, int d_A, long n, long N) {
            auto src = simgen::gen_source(make_spec(setting, seed, d_A, n, N));
            return py::make_tuple(src.X, src.A, src.Y);
        },
        py::arg("setting"), py::arg("seed"), py::arg("d_a") = -1, py::arg("n") = 0,
        py::arg("target_n") = 0);
    m.def(
        "gen_target",
        [](const std::string& setting, std::uint64_t seed, int d_A, long n, long N) {
            return simgen::gen_target(make_spec(setting, seed, d_A, n, N)).X;
        },
        py::arg("setting"), py::arg("seed"), py::arg("d_a") = -1, py::arg("n") = 0,
        py::arg("target_n") = 0);
    m.def(
        "gen_perturbed_test",
        [](const std::string& setting, std::uint64_t seed, double s, std::uint64_t mc, int d_A,
           long n, long N) {
            auto t = simgen::gen_perturbed_test(make_spec(setting, seed, d_A, n, N), s, mc);
            return py::make_tuple(t.X, t.A, t.Y, *t.fbar_truth);
        },
        py::arg("setting"), py::arg("seed"), py::arg("scale"), py::arg("mc_index"),
        py::arg("d_a") = -1, py::arg("n") = 0, py::arg("target_n") = 0);

    // --- dense networks -----------------------------------------------------
    py::class_<nnet::DenseNet>(m, "DenseNet")
        .def_property_readonly("widths", [](const nnet::DenseNet& n) { return n.widths; })
        .def("forward", [](const nnet::DenseNet& n, const Mat& x) { return nnet::forward(n, x); })
        .def("param_count", &nnet::DenseNet::param_count);
    m.def(
        "net_new",
        [](const std::vector<int>& widths, const std::vector<std::string>& activations,
           std::uint64_t seed) { return nnet::net_new(widths, acts_by_name(activations), seed); },
        py::arg("widths"), py::arg("activations"), py::arg("seed"));
    m.def(
        "train",
        [](nnet::DenseNet& net, const Mat& X, const Mat& Y, const std::string& loss, double lr,
           int epochs, int batch_size, std::uint64_t seed, py::object clip) {
            auto spec = loss_by_name(loss, nullptr);
            auto opt = nnet::adam_new(net, lr);
            std::optional<double> c;
            if (!clip.is_none()) c = clip.cast<double>();
            return nnet::fit(net, X, Y, spec, opt, epochs, batch_size, seed, c).epoch_loss;
        },
        py::arg("net"), py::arg("x"), py::arg("y"), py::arg("loss") = "mse", py::arg("lr") = 1e-3,
        py::arg("epochs") = 10, py::arg("batch_size") = 128, py::arg("seed") = 0,
        py::arg("clip") = py::none());
    m.def(
        "grad_check",
        [](nnet::DenseNet& net, const Mat& X, const Mat& Y, const std::string& loss) {
            auto spec = loss_by_name(loss, nullptr);
            return nnet::grad_check(net, X, Y, spec);
        },
        py::arg("net"), py::arg("x"), py::arg("y"), py::arg("loss") = "mse");

    // --- estimators ---------------------------------------------------------
    py::class_<core::OutcomeModel>(m, "OutcomeModel")
        .def("eval", &core::OutcomeModel::eval)
        .def_property_readonly("epoch_loss",
                               [](const core::OutcomeModel& f) { return f.epoch_loss; });
    py::class_<core::Generator>(m, "Generator")
        .def("sample", [](const core::Generator& g, py::object X, const Mat& eps) {
            if (X.is_none()) return g.sample(nullptr, eps);
            Mat x = X.cast<Mat>();
            return g.sample(&x, eps);
        });
    py::class_<debias::DebiasedPredictor>(m, "DebiasedPredictor")
        .def("predict", &debias::DebiasedPredictor::predict);

    m.def(
        "fit_outcome_model",
        [](const Mat& X, const Mat& A, const Vec& Y, double lr, int epochs, std::uint64_t seed,
           const std::string& task) {
            core::OutcomeHp hp;
            hp.lr = lr;
            hp.epochs = epochs;
            hp.seed = seed;
            return core::fit_outcome_model(X, A, Y, hp,
                                           task == "binary" ? Task::binary : Task::regression);
        },
        py::arg("x"), py::arg("a"), py::arg("y"), py::arg("lr") = 1e-5, py::arg("epochs") = 100,
        py::arg("seed") = 0, py::arg("task") = "regression");
    m.def(
        "fit_worstcase_unconstrained",
        [](const core::OutcomeModel& f, const Mat& target_X, int q, int L, double lr, int epochs,
           std::uint64_t seed) {
            core::WorstCaseHp hp;
            hp.q = q;
            hp.L = L;
            hp.lr = lr;
            hp.epochs = epochs;
            hp.seed = seed;
            auto fit = core::fit_worstcase_unconstrained(f, target_X, hp);
            return py::make_tuple(fit.gen, fit.objective_per_epoch);
        },
        py::arg("f"), py::arg("target_x"), py::arg("q") = 4, py::arg("L") = 256,
        py::arg("lr") = 1e-5, py::arg("epochs") = 300, py::arg("seed") = 0);
    m.def(
        "predict_robust",
        [](const core::OutcomeModel& f, const core::Generator& gen, const Mat& X, int L,
           std::uint64_t seed) {
            core::RobustPredictor rp{f, gen, L, seed};
            return core::predict(rp, X);
        },
        py::arg("f"), py::arg("gen"), py::arg("x"), py::arg("L") = 256, py::arg("seed") = 0);
    m.def("energy_score", &core::energy_score, py::arg("gen"), py::arg("x"), py::arg("a"),
          py::arg("eps_seed"));

    // --- metrics ------------------------------------------------------------
    m.def("normalized_mse", &metrics::normalized_mse);
    m.def("brier", &metrics::brier);
    m.def(
        "ece_quantile",
        [](const Vec& p, const Vec& y, int bins) { return metrics::ece_quantile(p, y, bins).first; },
        py::arg("pred"), py::arg("labels"), py::arg("bins") = 10);
    m.def("auroc", &metrics::auroc);
    m.def("auprc", &metrics::auprc);
    m.def(
        "fixed_cutoff",
        [](const Vec& p, const Vec& y, double t) {
            auto r = metrics::fixed_cutoff(p, y, t);
            return py::dict(py::arg("f1") = r.f1, py::arg("precision") = r.precision,
                            py::arg("recall") = r.recall, py::arg("specificity") = r.specificity);
        },
        py::arg("pred"), py::arg("labels"), py::arg("t"));
    m.def("ess", &baselines::ess);

    // --- baselines ------------------------------------------------------------
    m.def(
        "kmm_weights",
        [](const Mat& Xs, const Mat& Xt, py::object bandwidth, double b_cap) {
            baselines::KmmOptions opts;
            if (!bandwidth.is_none()) opts.bandwidth = bandwidth.cast<double>();
            opts.b_cap = b_cap;
            auto w = baselines::kmm_weights(Xs, Xt, opts);
            return py::make_tuple(w.w, w.ess);
        },
        py::arg("source_x"), py::arg("target_x"), py::arg("bandwidth") = py::none(),
        py::arg("b_cap") = 1000.0);
    m.def(
        "classifier_weights",
        [](const Mat& Xs, const Mat& Xt) {
            auto w = baselines::classifier_weights(Xs, Xt);
            return py::make_tuple(w.w, w.ess);
        },
        py::arg("source_x"), py::arg("target_x"));
    m.def(
        "chisq_robust_loss",
        [](const Vec& losses, double rho) { return baselines::chisq_robust_loss(losses, rho); },
        py::arg("losses"), py::arg("rho"));
    m.def(
        "impute_pseudo_labels",
        [](const Mat& Xs, const Vec& Ys, const Mat& Xt, const std::string& method,
           std::uint64_t seed) {
            return baselines::impute_pseudo_labels(Xs, Ys, Xt,
                                                   baselines::imputer_from_name(method), seed);
        },
        py::arg("source_x"), py::arg("source_y"), py::arg("target_x"), py::arg("method"),
        py::arg("seed") = 0);

    // --- debias ------------------------------------------------------------
    m.def(
        "drum_debiased",
        [](const Mat& Xs, const Mat& As, const Vec& Ys, const Mat& Xt, const std::string& variant,
           std::uint64_t seed, const std::string& hp_json) {
            harness::HpProfiles profiles = harness::default_profiles(simgen::Setting::I,
                                                                     static_cast<int>(As.cols()));
            if (!hp_json.empty())
                harness::apply_overrides(profiles, nlohmann::json::parse(hp_json));
            harness::DrumStages stages;
            std::string name = variant == "conditional" ? "DRUM-Debiased"
                                                        : "DRUM-Debiased-Unconstrained";
            auto trained = harness::train_method(name, Xs, As, Ys, Xt, profiles, stages,
                                                 Task::regression, seed);
            return *trained.debiased;
        },
        py::arg("source_x"), py::arg("source_a"), py::arg("source_y"), py::arg("target_x"),
        py::arg("variant") = "unconstrained", py::arg("seed") = 1, py::arg("hp_json") = "");

    // --- harness -------------------------------------------------------------
    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            auto cfg = harness::config_from_json(nlohmann::json::parse(config_json));
            return harness::cmd_run(cfg);
        },
        py::arg("config_json"));
    m.def(
        "simulate",
        [](const std::string& setting, std::uint64_t seed, const std::string& out_dir, int d_A,
           long n, long N, const std::vector<double>& scales, int mc_count) {
            return harness::cmd_simulate(setting, d_A, seed, n, N, scales, mc_count, out_dir);
        },
        py::arg("setting"), py::arg("seed"), py::arg("out_dir"), py::arg("d_a") = -1,
        py::arg("n") = 5000, py::arg("target_n") = 1000,
        py::arg("scales") = std::vector<double>{0.6, 1.0, 1.4, 1.8}, py::arg("mc_count") = 100);
}
