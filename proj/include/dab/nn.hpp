#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dab/binarize.hpp"
#include "dab/data.hpp"
#include "dab/grad.hpp"
#include "dab/tensor.hpp"

namespace dab {

enum class LayerKind : std::uint8_t {
    Conv2d = 0,
    Dense = 1,
    BatchNorm = 2,
    MaxPool = 3,
    SignActivation = 4,
    Relu = 5,
    SoftmaxXent = 6,
};

// FPrec: plain float weights. WBin: weights binarized, float inputs.
// FBin: weights binarized and inputs sign-activated, evaluated by bit kernels.
enum class BinMode : std::uint8_t { FPrec = 0, WBin = 1, FBin = 2 };

enum class LossKind : std::uint8_t { SoftmaxXent = 0 };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t units = 0; // conv out-channels or dense out-features
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    bool bias = true;
    BinMode bin_mode = BinMode::FPrec;
    Scheme scheme = Scheme::Dab;
};

struct NetworkConfig {
    std::vector<LayerSpec> layers;
    std::vector<std::size_t> input_shape; // {c, h, w} or {features}
    int class_count = 0;
    LossKind loss = LossKind::SoftmaxXent;
};

inline bool is_binarized_layer(const LayerSpec& spec) {
    return (spec.kind == LayerKind::Conv2d || spec.kind == LayerKind::Dense) &&
           spec.bin_mode != BinMode::FPrec;
}

// Static shape/mode chain check. Enforces: the first conv/dense layer is
// full precision, binarized layers carry no bias, FBin layers directly
// follow a sign activation, and the net ends in a dense layer sized to the
// class count.
void validate_config(const NetworkConfig& config);

struct Hyperparams {
    float lr_max = 0.002f;
    float lr_min = 0.00005f;
    float lr_decay_factor = 2.0f;
    int plateau_patience = 2;
    std::size_t batch = 64;
    int epochs = 15;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    std::uint32_t seed = 1;
    GradMode grad_mode = GradMode::Paper;
    SteKind ste = SteKind::ValueScaled;
    int threads = 1;
    bool augment_hflip = true;
};

struct AdamMoments {
    RealTensor m, v;
};

// Resolved per-layer shapes plus parameters. For binarized layers `filters`
// holds the current binarization; inference reads only `filters`, never `w`.
struct LayerState {
    LayerSpec spec;

    // input/output geometry resolved by init_state
    std::size_t in_c = 0, in_h = 0, in_w = 0;
    std::size_t out_c = 0, out_h = 0, out_w = 0;

    RealTensor w, b;                       // conv/dense
    RealTensor bn_gamma, bn_beta;          // batchnorm
    RealTensor bn_mean, bn_var;            // running statistics

    std::vector<BinarizedFilter> filters;

    AdamMoments mw, mb, mgamma, mbeta;
};

struct TrainState {
    std::vector<LayerState> layers;
    std::uint64_t step = 0; // number of optimizer updates applied
    float lr = 0.0f;
    float best_plateau_loss = 0.0f;
    int epochs_since_improvement = 0;
    bool plateau_initialized = false;
    std::uint32_t seed = 0;
};

// Validates the config and resolves every layer's geometry, leaving all
// parameter tensors empty. Serialization rebuilds states through this.
TrainState skeleton_state(const NetworkConfig& config);

TrainState init_state(const NetworkConfig& config, std::uint32_t seed);

struct LayerCache {
    RealTensor input;      // what the layer consumed
    RealTensor wtilde;     // reconstructed two-value weights (binarized layers)
    RealTensor centered;   // conditioned pre-clamp weights (projection mode gate)
    RealTensor bn_xhat;    // normalized activations
    std::vector<float> bn_mean, bn_invstd;
    std::vector<std::size_t> pool_argmax;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    RealTensor logits;
    bool valid = false;
};

// Training-path forward per Algorithm-2 ordering: every binarized layer's
// real weights are mean-centered and clamped in place (the conditioning is
// persistent), re-binarized per filter, and then applied: WBin layers
// multiply float inputs by the reconstructed weights, FBin layers run the
// packed popcount kernels on sign inputs. Batch norm uses batch statistics
// and updates running ones.
RealTensor binary_forward(const NetworkConfig& config, TrainState& state,
                          const RealTensor& batch, const Hyperparams& hyper,
                          ForwardCache& cache);

// Inference-path forward: binarized layers use their stored filters (w is
// never read), batch norm uses running statistics.
RealTensor forward_inference(const NetworkConfig& config,
                             const TrainState& state, const RealTensor& batch,
                             int threads = 1);

struct ParamGrads {
    RealTensor w, b, gamma, beta;
};

// Backprop using the binarized weights. Through each binarized layer's
// weight map the gradient flows per hyper.grad_mode: Paper applies the
// surrogate formulas exactly as published (no conditioning Jacobian);
// Projection composes the exact fixed-mask Jacobian with the clamp gate and
// mean-center transpose, which is what finite differences see.
std::vector<ParamGrads> binary_backward(const NetworkConfig& config,
                                        const TrainState& state,
                                        const ForwardCache& cache,
                                        const RealTensor& loss_grad,
                                        const Hyperparams& hyper);

// In-place Adam with bias correction; t is the 1-based update count.
void adam_update(RealTensor& w, const RealTensor& grad, AdamMoments& moments,
                 std::uint64_t t, float lr, const Hyperparams& hyper);

// One full Algorithm-2 step: condition + binarize + forward, loss, backward
// on the binarized weights, Adam update on the real ones. Returns the batch
// loss.
double train_step(const NetworkConfig& config, TrainState& state,
                  const RealTensor& batch, const std::vector<int>& targets,
                  const Hyperparams& hyper);

// Halves the learning rate (down to lr_min) when the supplied loss has not
// improved for `plateau_patience` consecutive epochs. Training feeds this the
// held-out loss: with binarized activations the train loss keeps shrinking
// while generalization stalls, so it makes a poor plateau signal.
void update_lr_on_epoch(TrainState& state, double epoch_loss,
                        const Hyperparams& hyper);

// Recomputes every binarized layer's filters from a conditioned copy of the
// current real weights, leaving the weights themselves untouched. This is
// what evaluation and serialization read.
void refresh_binarization(const NetworkConfig& config, TrainState& state,
                          int threads = 1);

// Replaces every BatchNorm layer's stored statistics with exact population
// moments of its inference-path input over `images` (weights frozen). The
// sweep runs front to back so each estimate sees upstream layers already in
// inference mode. The per-batch running average kept during training is a
// poor stand-in here: sign activations turn small normalization differences
// into wholesale bit flips, so fully binarized nets can score far below
// their batch-statistics accuracy without this step.
void reestimate_bn_stats(const NetworkConfig& config, TrainState& state,
                         const RealTensor& images, int threads = 1);

// Top-1 accuracy over the dataset through the inference path.
double evaluate(const NetworkConfig& config, const TrainState& state,
                const Dataset& dataset, int threads = 1);

// Mean cross-entropy after softmax, and its gradient w.r.t. the logits
// (already divided by the batch size).
std::pair<double, RealTensor> softmax_xent(const RealTensor& logits,
                                           const std::vector<int>& targets);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    float lr = 0.0f;
};

using EpochHook = std::function<void(const TrainState&, int epoch)>;

// Full training run: per epoch, a deterministically shuffled pass with
// optional horizontal-flip augmentation, then a binarization refresh, a
// BatchNorm statistic re-estimation over the training images, test
// evaluation, and the plateau learning-rate update driven by the test-split
// loss. The hook (if any) runs after each epoch's refresh and sees the state
// read-only.
std::vector<EpochMetrics> train_network(const NetworkConfig& config,
                                        TrainState& state,
                                        const Dataset& train,
                                        const Dataset& test,
                                        const Hyperparams& hyper,
                                        const EpochHook& hook = {});

// Reference architectures sized for 32x32 single-channel inputs.
NetworkConfig make_convnet(BinMode mode, Scheme scheme, int class_count,
                           std::size_t input_hw = 32);
NetworkConfig make_mlp(BinMode mode, Scheme scheme, int class_count,
                       std::size_t input_hw = 32);

} // namespace dab
