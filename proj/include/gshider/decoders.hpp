#pragma once

#include <cstdint>
#include <vector>

#include "gshider/rasterizer.hpp"

namespace gshider {

enum class FinalAct : std::uint8_t { None = 0, Sigmoid = 1, Tanh = 2 };

/// One 3x3 convolution layer, stride 1, zero padding 1 (spatial size is
/// preserved). Weights are stored [ky][kx][in][out] so the hot loop runs
/// contiguously over output channels; float32 storage, double math.
struct ConvLayer {
    int in_channels = 0, out_channels = 0;
    std::vector<float> weights;  // 9 * in * out
    std::vector<float> bias;     // out

    std::size_t weight_count() const {
        return 9u * static_cast<std::size_t>(in_channels) * out_channels;
    }
    float& w(int ky, int kx, int ic, int oc) {
        return weights[((static_cast<std::size_t>(ky) * 3 + kx) * in_channels + ic) *
                           out_channels +
                       oc];
    }
};

/// Convolution + ReLU stack; ReLU after every layer except the last, which
/// gets `final_act` instead.
struct ConvStack {
    std::vector<ConvLayer> layers;
    FinalAct final_act = FinalAct::Sigmoid;

    bool empty() const { return layers.empty(); }
    int input_channels() const { return layers.empty() ? 0 : layers.front().in_channels; }
    int output_channels() const { return layers.empty() ? 0 : layers.back().out_channels; }
    void validate() const;  // adjacent channel counts must match
};

/// Kaiming-style seeded initialization. `channels` lists the channel counts
/// boundary-to-boundary, e.g. {16, 64, 64, 64, 64, 3} builds five layers.
ConvStack make_conv_stack(const std::vector<int>& channels, FinalAct final_act,
                          std::uint64_t seed);

/// Forward activations cached for the backward pass.
struct DecoderCache {
    std::vector<FeatureImage> inputs;  // input of each layer
    FeatureImage output;               // final activations
    bool valid = false;
};

/// Runs the stack on an H x W x C_in image; output is H x W x C_out.
/// Throws std::invalid_argument on channel mismatch.
FeatureImage decoder_forward(const ConvStack& stack, const FeatureImage& input,
                             DecoderCache* cache = nullptr, int threads = 1);

struct ConvStackGrads {
    std::vector<std::vector<double>> weights;  // per layer, matches layout
    std::vector<std::vector<double>> bias;
    FeatureImage input;  // dL/d(input image)
};

/// Exact adjoint of decoder_forward given its cache. Weight-gradient
/// partials are accumulated over fixed row bands and merged in band order,
/// so results are bit-identical for every thread count.
ConvStackGrads decoder_backward(const ConvStack& stack, const DecoderCache& cache,
                                const FeatureImage& d_output, int threads = 1);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean local SSIM over pixels and channels (11x11 Gaussian window,
/// sigma 1.5, C1=0.01^2, C2=0.03^2, [0,1] range convention). Border windows
/// are renormalized. Optionally fills the gradient w.r.t. `a`.
double ssim(const FeatureImage& a, const FeatureImage& b,
            FeatureImage* grad_a = nullptr);

struct LossValue {
    double value = 0.0;
    double l1_component = 0.0;    // mean absolute error term
    double ssim_component = 0.0;  // 1 - SSIM term (0 when w = 0)
    FeatureImage grad;            // w.r.t. the prediction
};

/// Mean absolute error with subgradient.
LossValue loss_l1(const FeatureImage& pred, const FeatureImage& gt);

/// (1-w) * l1 + w * (1 - SSIM); w = gamma for the scene stream and beta for
/// the message stream.
LossValue loss_weighted(const FeatureImage& pred, const FeatureImage& gt, double w);

inline double loss_total(double rgb, double mes, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("loss_total: lambda must be >= 0");
    return rgb + lambda * mes;
}

struct LossReport {
    double rgb = 0.0, mes = 0.0, total = 0.0, cop = 0.0;
    double rgb_l1 = 0.0, rgb_ssim = 0.0;  // component breakdown
    double mes_l1 = 0.0, mes_ssim = 0.0;
};

/// Mean squared error with gradient w.r.t. the prediction.
LossValue loss_mse(const FeatureImage& pred, const FeatureImage& gt);

struct CopLoss {
    double value = 0.0;
    ConvStackGrads pred_grads;  // D_w grads from the watermarked-render term
    ConvStackGrads gt_grads;    // D_w grads from the clean-image term
};

/// Copyright loss: mse(D_w(pred), w_cop) + mse(D_w(gt), 0). Returns the
/// decoder weight gradients of both terms (summed by the caller's optimizer
/// step) and, through pred_grads.input, the gradient w.r.t. `pred`.
CopLoss loss_cop(const ConvStack& d_w, const FeatureImage& pred, const FeatureImage& gt,
                 const FeatureImage& w_cop, int threads = 1);

}  // namespace gshider
