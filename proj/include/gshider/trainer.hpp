#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gshider/dataset.hpp"
#include "gshider/decoders.hpp"
#include "gshider/rng.hpp"
#include "gshider/scene_model.hpp"

namespace gshider {

enum class TrainMode {
    Hider,            // coupled features + two decoders
    HiderImage,       // features + decoders, one designated hidden view
    HiderMulti,       // features + decoders, L hidden scenes
    Baseline3dgs,     // plain SH splatting, no decoders
    BaselineSh,       // two SH sets over shared geometry
    BaselineDecoder,  // SH splatting + message decoder on the rendered RGB
};

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::Hider;
    int iterations = 3000;
    double lambda = 0.5;  // message-loss weight
    double beta = 0.2;    // SSIM weight, message stream
    double gamma = 0.2;   // SSIM weight, scene stream
    int feature_dim = 16;
    int hidden_count = 1;  // L for HiderMulti

    // Adam learning rates per parameter class; positions are additionally
    // scaled by the scene extent and decayed to 1% over the run.
    double lr_position = 1.6e-4;
    double lr_feature = 2.5e-3;  // features and SH coefficients
    double lr_opacity = 5e-2;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_decoder = 1e-3;

    // Adaptive density control.
    int densify_interval = 100;
    int densify_start = 500;
    int densify_end = -1;  // < 0: 60% of iterations
    double tau_grad = 2e-4;
    double eps_prune = 0.005;
    double split_scale_fraction = 0.01;  // of scene extent
    std::size_t max_gaussians = 0;       // 0 = unlimited

    int decoder_width = 64;
    int decoder_depth = 5;

    /// Cloud size for random-box initialization (used only when the dataset
    /// carries no seed points).
    std::size_t init_random_points = 1000;

    std::uint64_t seed = 0;
    std::string background = "black";  // RGB modes: black | white
    int eval_interval = 250;
    int threads = 1;

    bool uses_decoders() const {
        return mode == TrainMode::Hider || mode == TrainMode::HiderImage ||
               mode == TrainMode::HiderMulti;
    }
    bool uses_feature_cloud() const { return uses_decoders(); }
    int effective_densify_end() const {
        return densify_end >= 0 ? densify_end : (iterations * 3) / 5;
    }
    int message_streams() const { return mode == TrainMode::HiderMulti ? hidden_count : 1; }
    RasterizeOptions raster_options() const {
        RasterizeOptions o;
        o.threads = threads;
        return o;
    }
    std::vector<double> rgb_background() const {
        double v = background == "white" ? 1.0 : 0.0;
        return {v, v, v};
    }
    void validate() const;  // throws std::invalid_argument
};

/// Positional-gradient statistics accumulated between density-control steps.
struct DensityStats {
    std::vector<double> grad_norm_sum;   // NDC-space screen gradient norms
    std::vector<double> world_grad_sum;  // N x 3, for the clone shift direction
    std::vector<std::uint32_t> seen;

    void reset(std::size_t n) {
        grad_norm_sum.assign(n, 0.0);
        world_grad_sum.assign(n * 3, 0.0);
        seen.assign(n, 0);
    }
    std::size_t size() const { return seen.size(); }
};

struct DensityControlResult {
    std::size_t pruned = 0, cloned = 0, split = 0;
    /// For every Gaussian of the new cloud, its source index in the old
    /// cloud, or -1 for fresh entries (clones and split children) whose
    /// optimizer moments start at zero.
    std::vector<std::int64_t> source;
};

/// Clones small high-gradient Gaussians (shifted along the accumulated
/// positional gradient), splits large ones into two children (scale / 1.6),
/// and prunes activated opacity below eps_prune.
DensityControlResult adaptive_density_control(GaussianCloud& cloud,
                                              const DensityStats& stats,
                                              const TrainConfig& config, Rng& rng);

/// Adam state for one parameter tensor. beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-15; moments mirror the parameter shape.
struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;

    void resize(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
    /// Gathers moments through an index mapping (-1 entries reset to zero).
    void remap(const std::vector<std::int64_t>& source, std::size_t stride);
    void update(float* params, const double* grads, std::size_t n, double lr);
};

struct MetricsRow {
    int iteration = 0;
    double loss_rgb = 0.0, loss_mes = 0.0;
    double psnr_s = 0.0, psnr_m = 0.0;
};

struct FitResult {
    GaussianCloud cloud;
    ConvStack scene_decoder;    // empty in baseline modes
    ConvStack message_decoder;  // empty when the mode has none
    std::vector<MetricsRow> history;
};

/// Raised when a training step produces a non-finite loss; message carries
/// the iteration, view and offending term.
class TrainAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Owns the artifacts and optimizer state of one optimization run and
/// exposes the per-iteration step so tests can drive it directly.
class Trainer {
public:
    Trainer(const PairedDataset& dataset, const TrainConfig& config);

    /// One forward/backward/update on the given view.
    LossReport train_step(std::size_t view_index);

    /// Applies the densify/prune schedule if the current iteration calls
    /// for it; returns whether it ran.
    bool maybe_density_control();

    /// Full loop: shuffled view sampling, density control, periodic
    /// held-out metrics.
    FitResult run();

    int iteration() const { return iteration_; }
    const GaussianCloud& cloud() const { return cloud_; }
    GaussianCloud& mutable_cloud() { return cloud_; }
    const ConvStack& scene_decoder() const { return scene_decoder_; }
    const ConvStack& message_decoder() const { return message_decoder_; }
    const DensityStats& density_stats() const { return stats_; }

    /// Held-out PSNR means (scene, message); message is NaN when absent.
    MetricsRow held_out_metrics();

private:
    LossReport step_feature_modes(std::size_t view_index);
    LossReport step_sh_modes(std::size_t view_index);
    void apply_cloud_update(const RasterGrads& grads, const std::vector<double>& d_sh,
                            const std::vector<double>& d_sh2,
                            const std::vector<double>& d_feat);
    void update_stack(ConvStack& stack, std::vector<AdamState>& states,
                      const ConvStackGrads& grads);
    void accumulate_stats(const RasterGrads& grads);
    double position_lr() const;

    const PairedDataset& dataset_;
    TrainConfig config_;
    GaussianCloud cloud_;
    ConvStack scene_decoder_, message_decoder_;
    AdamState adam_positions_, adam_rotations_, adam_scales_, adam_opacities_;
    AdamState adam_features_, adam_sh_, adam_sh2_;
    std::vector<AdamState> adam_scene_dec_, adam_message_dec_;
    DensityStats stats_;
    Rng rng_;
    int iteration_ = 0;
};

FitResult fit(const PairedDataset& dataset, const TrainConfig& config);

struct RtwsConfig {
    int pretrain_iterations = 2500;  // watermark encoder/decoder warm-up on GT
    int finetune_iterations = 800;   // feature-only fit to the mixed targets
    int decoder_iterations = 1500;   // copyright-decoder adaptation to renders
    double residual_scale = 0.02;
    double lr = 1e-3;
    double gamma = 0.2;  // scene-loss SSIM weight during the fine-tune
    int encoder_width = 16;
    int decoder_width = 32;
    std::uint64_t seed = 7;
    int threads = 1;
};

/// Fixed mid-frequency carrier channels handed to the watermark encoder so
/// it can modulate the copyright image onto a band that rendered views can
/// still express but natural images barely occupy. Two diagonal waves.
inline constexpr double kWatermarkCarrierPeriod = 6.0;
FeatureImage watermark_carrier(int height, int width);

struct RtwsResult {
    GaussianCloud cloud;
    ConvStack encoder;  // E_w: (cover, watermark) -> bounded residual
    ConvStack decoder;  // D_w: image -> watermark (or black)
};

/// Embeds `w_cop` into half the training views via E_w, fine-tunes only the
/// coupled features toward the mixed targets (geometry and D_s frozen), and
/// adapts D_w to emit the watermark on renders and black on clean views.
RtwsResult rtws_finetune(const GaussianCloud& cloud, const ConvStack& scene_decoder,
                         const PairedDataset& dataset, const FeatureImage& w_cop,
                         const RtwsConfig& config);

/// Applies the watermark encoder: cover + residual_scale * E_w(cover, w).
FeatureImage apply_watermark(const ConvStack& encoder, const FeatureImage& cover,
                             const FeatureImage& w_cop, double residual_scale,
                             int threads = 1);

}  // namespace gshider
