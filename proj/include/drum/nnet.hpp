#pragma once

#include "drum/common.hpp"

#include <functional>
#include <nlohmann/json_fwd.hpp>
#include <optional>

namespace drum::nnet {

enum class Activation { relu, identity, sigmoid };

enum class LossKind { mse, bce, weighted_mse, custom };

// custom: fills d_out (gradient wrt post-activation outputs) and returns the loss.
using CustomLoss = std::function<double(const Mat& out, const Mat& targets, Mat& d_out)>;

struct LossSpec {
    LossKind kind = LossKind::mse;
    const Vec* weights = nullptr;  // weighted_mse: one non-negative weight per row
    CustomLoss custom;
};

struct DenseNet {
    std::vector<int> widths;                // input -> hidden... -> output
    std::vector<Activation> activations;    // one per layer, size widths.size()-1
    std::vector<Mat> weights;               // [k]: widths[k+1] x widths[k]
    std::vector<Vec> biases;                // [k]: widths[k+1]
    std::uint64_t seed = 0;

    int input_dim() const { return widths.front(); }
    int output_dim() const { return widths.back(); }
    int layer_count() const { return static_cast<int>(weights.size()); }
    std::size_t param_count() const;
};

// He-uniform init for relu layers, Glorot-uniform otherwise; biases start at zero.
DenseNet net_new(const std::vector<int>& widths, const std::vector<Activation>& activations,
                 std::uint64_t seed);

Mat forward(const DenseNet& net, const Mat& batch);

// Post-activation values per layer, kept for backward. acts[0] is the input.
struct ForwardCache {
    std::vector<Mat> acts;
};

Mat forward_cached(const DenseNet& net, const Mat& batch, ForwardCache& cache);

struct NetGrads {
    std::vector<Mat> w;
    std::vector<Vec> b;
    void add(const NetGrads& other);
    double squared_norm() const;
};

NetGrads zero_grads(const DenseNet& net);

// Backpropagates d_out (gradient wrt the network output). When grads is null only
// the input gradient is produced (frozen net). d_out_is_preactivation skips the
// final activation derivative — used for the fused bce/sigmoid path.
Mat backward(const DenseNet& net, const ForwardCache& cache, const Mat& d_out,
             NetGrads* grads, bool d_out_is_preactivation = false);

struct AdamState {
    std::vector<Mat> m_w, v_w;
    std::vector<Vec> m_b, v_b;
    long step = 0;
    double lr = 1e-3;
    double weight_decay = 0.0;  // decoupled (applied directly to weights)
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

AdamState adam_new(const DenseNet& net, double lr, double weight_decay = 0.0);

void adam_step(DenseNet& net, const NetGrads& grads, AdamState& opt);

// Scales the whole gradient so its global L2 norm is at most `clip`.
void clip_global_norm(NetGrads& grads, double clip);

// One Adam step on the mean batch loss; returns the pre-step loss.
// Throws DivergenceError (with the optimizer step index) on non-finite loss.
double train_step(DenseNet& net, const Mat& batch, const Mat& targets, const LossSpec& loss,
                  AdamState& opt, std::optional<double> clip = std::nullopt);

// Loss and its gradient wrt outputs; shared by train_step and composite objectives.
double loss_eval(const Mat& out, const Mat& targets, const LossSpec& loss, Mat* d_out);

// Max over parameters of |g_ad - g_fd| / (|g_fd| + 1e-8), central differences h=1e-5.
double grad_check(DenseNet& net, const Mat& batch, const Mat& targets, const LossSpec& loss);

// Epoch-shuffled mini-batch training; losses recorded per epoch (mean over batches).
struct TrainLog {
    std::vector<double> epoch_loss;
};

TrainLog fit(DenseNet& net, const Mat& X, const Mat& Y, const LossSpec& loss, AdamState& opt,
             int epochs, int batch_size, std::uint64_t shuffle_seed,
             std::optional<double> clip = std::nullopt);

void to_json(nlohmann::json& j, const DenseNet& net);
void from_json(const nlohmann::json& j, DenseNet& net);

}  // namespace drum::nnet
