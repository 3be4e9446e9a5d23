#include "drum/nnet.hpp"
#include "drum/rng.hpp"

#include <cblas.h>
#include <cmath>
#include <nlohmann/json.hpp>

namespace drum::nnet {

namespace {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation: " + s);
}

// out = a * b^T  (a: m x k, b: n x k, out: m x n), row-major buffers
void gemm_nt(const Mat& a, const Mat& b, Mat& out) {
    out.resize(a.rows(), b.rows());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(a.rows()),
                static_cast<int>(b.rows()), static_cast<int>(a.cols()), 1.0, a.data(),
                static_cast<int>(a.cols()), b.data(), static_cast<int>(b.cols()), 0.0, out.data(),
                static_cast<int>(out.cols()));
}

// out = a^T * b  (a: k x m, b: k x n, out: m x n)
void gemm_tn(const Mat& a, const Mat& b, Mat& out) {
    out.resize(a.cols(), b.cols());
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(a.cols()),
                static_cast<int>(b.cols()), static_cast<int>(a.rows()), 1.0, a.data(),
                static_cast<int>(a.cols()), b.data(), static_cast<int>(b.cols()), 0.0, out.data(),
                static_cast<int>(out.cols()));
}

// out = a * b  (a: m x k, b: k x n)
void gemm_nn(const Mat& a, const Mat& b, Mat& out) {
    out.resize(a.rows(), b.cols());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(a.rows()),
                static_cast<int>(b.cols()), static_cast<int>(a.cols()), 1.0, a.data(),
                static_cast<int>(a.cols()), b.data(), static_cast<int>(b.cols()), 0.0, out.data(),
                static_cast<int>(out.cols()));
}

void apply_activation(Activation act, Mat& z) {
    switch (act) {
        case Activation::relu:
            z = z.cwiseMax(0.0);
            break;
        case Activation::identity:
            break;
        case Activation::sigmoid:
            // clamped away from {0,1} so probability outputs keep the open-interval
            // contract even when the pre-activation saturates in double precision
            z = z.unaryExpr([](double v) {
                double p = 1.0 / (1.0 + std::exp(-v));
                return std::min(std::max(p, 1e-15), 1.0 - 1e-15);
            });
            break;
    }
}

// derivative expressed through the post-activation value
void apply_activation_grad(Activation act, const Mat& h, Mat& delta) {
    switch (act) {
        case Activation::relu:
            delta.array() *= (h.array() > 0.0).cast<double>();
            break;
        case Activation::identity:
            break;
        case Activation::sigmoid:
            delta.array() *= h.array() * (1.0 - h.array());
            break;
    }
}

}  // namespace

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (int k = 0; k < layer_count(); ++k)
        n += static_cast<std::size_t>(weights[k].size()) + static_cast<std::size_t>(biases[k].size());
    return n;
}

DenseNet net_new(const std::vector<int>& widths, const std::vector<Activation>& activations,
                 std::uint64_t seed) {
    if (widths.size() < 2) throw ConfigError("net_new: need at least input and output widths");
    for (int w : widths)
        if (w <= 0) throw ConfigError("net_new: widths must be positive");
    if (activations.size() != widths.size() - 1)
        throw ConfigError("net_new: activations must have one entry per layer");

    DenseNet net;
    net.widths = widths;
    net.activations = activations;
    net.seed = seed;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
        int fan_in = widths[k], fan_out = widths[k + 1];
        double limit = activations[k] == Activation::relu
                           ? std::sqrt(6.0 / fan_in)
                           : std::sqrt(6.0 / (fan_in + fan_out));
        Rng rng(seed, "nnet-init", k);
        Mat w(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) w(i, j) = rng.uniform(-limit, limit);
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vec::Zero(fan_out));
    }
    return net;
}

Mat forward_cached(const DenseNet& net, const Mat& batch, ForwardCache& cache) {
    if (batch.cols() != net.input_dim())
        throw InputError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, net expects " + std::to_string(net.input_dim()));
    cache.acts.assign(1, batch);
    Mat h;
    for (int k = 0; k < net.layer_count(); ++k) {
        gemm_nt(cache.acts.back(), net.weights[k], h);
        h.rowwise() += net.biases[k].transpose();
        apply_activation(net.activations[k], h);
        cache.acts.push_back(h);
    }
    return cache.acts.back();
}

Mat forward(const DenseNet& net, const Mat& batch) {
    if (!batch.allFinite()) throw InputError("forward: non-finite input");
    ForwardCache cache;
    return forward_cached(net, batch, cache);
}

NetGrads zero_grads(const DenseNet& net) {
    NetGrads g;
    for (int k = 0; k < net.layer_count(); ++k) {
        g.w.push_back(Mat::Zero(net.weights[k].rows(), net.weights[k].cols()));
        g.b.push_back(Vec::Zero(net.biases[k].size()));
    }
    return g;
}

void NetGrads::add(const NetGrads& other) {
    for (std::size_t k = 0; k < w.size(); ++k) {
        w[k] += other.w[k];
        b[k] += other.b[k];
    }
}

double NetGrads::squared_norm() const {
    double s = 0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k].squaredNorm() + b[k].squaredNorm();
    return s;
}

Mat backward(const DenseNet& net, const ForwardCache& cache, const Mat& d_out, NetGrads* grads,
             bool d_out_is_preactivation) {
    Mat delta = d_out;
    Mat d_prev;
    for (int k = net.layer_count() - 1; k >= 0; --k) {
        if (!(d_out_is_preactivation && k == net.layer_count() - 1))
            apply_activation_grad(net.activations[k], cache.acts[k + 1], delta);
        if (grads) {
            Mat dw;
            gemm_tn(delta, cache.acts[k], dw);
            grads->w[k] += dw;
            grads->b[k] += delta.colwise().sum().transpose();
        }
        if (k > 0) {
            gemm_nn(delta, net.weights[k], d_prev);
            delta.swap(d_prev);
        } else {
            gemm_nn(delta, net.weights[0], d_prev);
        }
    }
    return d_prev;
}

AdamState adam_new(const DenseNet& net, double lr, double weight_decay) {
    AdamState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    for (int k = 0; k < net.layer_count(); ++k) {
        s.m_w.push_back(Mat::Zero(net.weights[k].rows(), net.weights[k].cols()));
        s.v_w.push_back(Mat::Zero(net.weights[k].rows(), net.weights[k].cols()));
        s.m_b.push_back(Vec::Zero(net.biases[k].size()));
        s.v_b.push_back(Vec::Zero(net.biases[k].size()));
    }
    return s;
}

void adam_step(DenseNet& net, const NetGrads& grads, AdamState& opt) {
    opt.step += 1;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (int k = 0; k < net.layer_count(); ++k) {
        opt.m_w[k] = opt.beta1 * opt.m_w[k] + (1.0 - opt.beta1) * grads.w[k];
        opt.v_w[k].array() =
            opt.beta2 * opt.v_w[k].array() + (1.0 - opt.beta2) * grads.w[k].array().square();
        opt.m_b[k] = opt.beta1 * opt.m_b[k] + (1.0 - opt.beta1) * grads.b[k];
        opt.v_b[k].array() =
            opt.beta2 * opt.v_b[k].array() + (1.0 - opt.beta2) * grads.b[k].array().square();
        if (opt.weight_decay > 0.0) net.weights[k] *= (1.0 - opt.lr * opt.weight_decay);
        net.weights[k].array() -= opt.lr * (opt.m_w[k].array() / bc1) /
                                  ((opt.v_w[k].array() / bc2).sqrt() + opt.eps);
        net.biases[k].array() -= opt.lr * (opt.m_b[k].array() / bc1) /
                                 ((opt.v_b[k].array() / bc2).sqrt() + opt.eps);
    }
}

void clip_global_norm(NetGrads& grads, double clip) {
    double norm = std::sqrt(grads.squared_norm());
    if (norm > clip && norm > 0.0) {
        double scale = clip / norm;
        for (std::size_t k = 0; k < grads.w.size(); ++k) {
            grads.w[k] *= scale;
            grads.b[k] *= scale;
        }
    }
}

double loss_eval(const Mat& out, const Mat& targets, const LossSpec& loss, Mat* d_out) {
    if (out.rows() != targets.rows() || out.cols() != targets.cols())
        throw InputError("loss: output/target shape mismatch");
    double b = static_cast<double>(out.rows());
    switch (loss.kind) {
        case LossKind::mse: {
            Mat r = out - targets;
            if (d_out) *d_out = (2.0 / b) * r;
            return r.squaredNorm() / b;
        }
        case LossKind::weighted_mse: {
            if (!loss.weights || loss.weights->size() != out.rows())
                throw ConfigError("weighted_mse: needs one weight per row");
            if ((loss.weights->array() < 0.0).any())
                throw ConfigError("weighted_mse: weights must be non-negative");
            Mat r = out - targets;
            Mat wr = loss.weights->asDiagonal() * r;
            if (d_out) *d_out = (2.0 / b) * wr;
            return (r.array() * wr.array()).sum() / b;
        }
        case LossKind::bce: {
            double total = 0;
            for (Eigen::Index i = 0; i < out.rows(); ++i)
                for (Eigen::Index j = 0; j < out.cols(); ++j) {
                    double p = std::min(std::max(out(i, j), 1e-12), 1.0 - 1e-12);
                    double y = targets(i, j);
                    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
                }
            // gradient is taken on the pre-activation (fused with sigmoid), so d_out
            // here is (p - y)/b and the caller passes d_out_is_preactivation = true.
            if (d_out) *d_out = (out - targets) / b;
            return total / b;
        }
        case LossKind::custom: {
            if (!loss.custom) throw ConfigError("custom loss: missing closure");
            Mat g;
            double v = loss.custom(out, targets, g);
            if (d_out) *d_out = std::move(g);
            return v;
        }
    }
    throw ConfigError("unknown loss kind");
}

double train_step(DenseNet& net, const Mat& batch, const Mat& targets, const LossSpec& loss,
                  AdamState& opt, std::optional<double> clip) {
    if (batch.rows() != targets.rows()) throw InputError("train_step: row count mismatch");
    if (loss.kind == LossKind::bce && net.activations.back() != Activation::sigmoid)
        throw ConfigError("bce loss requires a sigmoid output layer");

    ForwardCache cache;
    Mat out = forward_cached(net, batch, cache);
    Mat d_out;
    double value = loss_eval(out, targets, loss, &d_out);
    if (!std::isfinite(value)) throw DivergenceError("training loss is not finite", opt.step);

    NetGrads grads = zero_grads(net);
    backward(net, cache, d_out, &grads, loss.kind == LossKind::bce);
    if (clip) clip_global_norm(grads, *clip);
    adam_step(net, grads, opt);
    return value;
}

double grad_check(DenseNet& net, const Mat& batch, const Mat& targets, const LossSpec& loss) {
    ForwardCache cache;
    Mat out = forward_cached(net, batch, cache);
    Mat d_out;
    loss_eval(out, targets, loss, &d_out);
    NetGrads grads = zero_grads(net);
    backward(net, cache, d_out, &grads, loss.kind == LossKind::bce);

    const double h = 1e-5;
    auto loss_at = [&]() {
        Mat o = forward(net, batch);
        return loss_eval(o, targets, loss, nullptr);
    };
    double worst = 0;
    for (int k = 0; k < net.layer_count(); ++k) {
        for (Eigen::Index i = 0; i < net.weights[k].size(); ++i) {
            double* p = net.weights[k].data() + i;
            double orig = *p;
            *p = orig + h;
            double up = loss_at();
            *p = orig - h;
            double down = loss_at();
            *p = orig;
            double fd = (up - down) / (2.0 * h);
            double ad = grads.w[k].data()[i];
            worst = std::max(worst, std::abs(ad - fd) / (std::abs(fd) + 1e-8));
        }
        for (Eigen::Index i = 0; i < net.biases[k].size(); ++i) {
            double* p = net.biases[k].data() + i;
            double orig = *p;
            *p = orig + h;
            double up = loss_at();
            *p = orig - h;
            double down = loss_at();
            *p = orig;
            double fd = (up - down) / (2.0 * h);
            double ad = grads.b[k](i);
            worst = std::max(worst, std::abs(ad - fd) / (std::abs(fd) + 1e-8));
        }
    }
    return worst;
}

TrainLog fit(DenseNet& net, const Mat& X, const Mat& Y, const LossSpec& loss, AdamState& opt,
             int epochs, int batch_size, std::uint64_t shuffle_seed, std::optional<double> clip) {
    long n = X.rows();
    TrainLog log;
    std::vector<long> order(n);
    for (long i = 0; i < n; ++i) order[i] = i;
    Mat bx, by;
    Vec bw;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(shuffle_seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch));
        rng.shuffle(order);
        double total = 0;
        long batches = 0;
        for (long start = 0; start < n; start += batch_size) {
            long size = std::min<long>(batch_size, n - start);
            bx.resize(size, X.cols());
            by.resize(size, Y.cols());
            for (long r = 0; r < size; ++r) {
                bx.row(r) = X.row(order[start + r]);
                by.row(r) = Y.row(order[start + r]);
            }
            LossSpec batch_loss = loss;
            if (loss.kind == LossKind::weighted_mse) {
                bw.resize(size);
                for (long r = 0; r < size; ++r) bw(r) = (*loss.weights)(order[start + r]);
                batch_loss.weights = &bw;
            }
            total += train_step(net, bx, by, batch_loss, opt, clip);
            ++batches;
        }
        log.epoch_loss.push_back(total / static_cast<double>(batches));
    }
    return log;
}

void to_json(nlohmann::json& j, const DenseNet& net) {
    j = nlohmann::json::object();
    j["format_version"] = 1;
    j["widths"] = net.widths;
    std::vector<std::string> acts;
    for (auto a : net.activations) acts.push_back(activation_name(a));
    j["activations"] = acts;
    j["seed"] = net.seed;
    auto weights = nlohmann::json::array();
    auto biases = nlohmann::json::array();
    for (int k = 0; k < net.layer_count(); ++k) {
        std::vector<double> w(net.weights[k].data(), net.weights[k].data() + net.weights[k].size());
        std::vector<double> b(net.biases[k].data(), net.biases[k].data() + net.biases[k].size());
        weights.push_back(w);  // row-major
        biases.push_back(b);
    }
    j["weights"] = weights;
    j["biases"] = biases;
}

void from_json(const nlohmann::json& j, DenseNet& net) {
    if (j.at("format_version").get<int>() != 1)
        throw ConfigError("unsupported net format_version");
    net.widths = j.at("widths").get<std::vector<int>>();
    net.activations.clear();
    for (const auto& s : j.at("activations")) net.activations.push_back(activation_from_name(s));
    net.seed = j.value("seed", 0ULL);
    net.weights.clear();
    net.biases.clear();
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    for (std::size_t k = 0; k + 1 < net.widths.size(); ++k) {
        auto wv = ws.at(k).get<std::vector<double>>();
        auto bv = bs.at(k).get<std::vector<double>>();
        Mat w(net.widths[k + 1], net.widths[k]);
        if (static_cast<std::size_t>(w.size()) != wv.size())
            throw ConfigError("net blob: weight size mismatch");
        std::copy(wv.begin(), wv.end(), w.data());
        net.weights.push_back(std::move(w));
        net.biases.push_back(Eigen::Map<Vec>(bv.data(), static_cast<Eigen::Index>(bv.size())));
    }
}

}  // namespace drum::nnet
