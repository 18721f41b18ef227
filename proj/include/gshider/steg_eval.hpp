#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gshider/dataset.hpp"
#include "gshider/decoders.hpp"
#include "gshider/scene_model.hpp"

namespace gshider {

inline constexpr double kPsnrCap = 99.0;  // identical images report 99 dB

/// 10 log10(1 / MSE) on [0,1]-range images, capped at kPsnrCap.
double psnr(const FeatureImage& a, const FeatureImage& b);

/// Removes floor(ratio * n) Gaussians with the lowest activated opacity
/// (ties by index).
GaussianCloud prune_sequential(const GaussianCloud& cloud, double ratio);

/// Removes floor(ratio * n) Gaussians uniformly at random (seeded).
GaussianCloud prune_random(const GaussianCloud& cloud, double ratio,
                           std::uint64_t seed);

struct ViewMetrics {
    int view = 0;
    double psnr_s = 0.0, ssim_s = 0.0;
    double psnr_m = 0.0, ssim_m = 0.0;  // NaN when the view has no hidden target
    double seconds = 0.0;               // render + decode wall clock
};

struct MetricsReport {
    std::vector<ViewMetrics> per_view;
    double mean_psnr_s = 0.0, mean_ssim_s = 0.0;
    double mean_psnr_m = 0.0, mean_ssim_m = 0.0;
    double mean_seconds = 0.0;
};

/// Renders and decodes every selected view and reports fidelity metrics.
/// Decoders may be null: SH clouds render directly; ShDouble uses the second
/// SH set as the message stream; a message decoder on an SH cloud decodes
/// from the rendered RGB.
MetricsReport evaluate(const GaussianCloud& cloud, const ConvStack* scene_decoder,
                       const ConvStack* message_decoder, const PairedDataset& dataset,
                       bool held_out_only = true, int threads = 1);

/// Decodes the rendered features with the trained message decoder and with a
/// freshly seeded random one; returns (trained, random) mean message PSNR
/// over the selected views.
std::pair<double, double> wrong_decoder_test(const GaussianCloud& cloud,
                                             const ConvStack& message_decoder,
                                             const PairedDataset& dataset,
                                             std::uint64_t seed,
                                             bool held_out_only = true,
                                             int threads = 1);

/// Steganalysis risk score in [0,1]: mean of the chi-square LSB attack and
/// sample-pairs analysis on the 8-bit quantized image.
double detector_score(const FeatureImage& rgb);

/// The chi-square component alone (exposed for tests).
double chi_square_lsb_score(const FeatureImage& rgb);
double sample_pairs_score(const FeatureImage& rgb);

struct RocPoint {
    double threshold, fpr, tpr;
};

struct DetectionReport {
    std::vector<double> positive_scores, negative_scores;
    std::vector<RocPoint> roc;  // monotone step curve from (0,0) to (1,1)
    double auc = 0.0;
};

/// Threshold sweep over all distinct scores; trapezoidal AUC (computed with
/// integer numerators, so it equals the pairwise win probability exactly).
DetectionReport roc_curve(const std::vector<double>& positive_scores,
                          const std::vector<double>& negative_scores);

void write_metrics_csv(const MetricsReport& report, const std::string& path);
void write_roc_csv(const DetectionReport& report, const std::string& path);

}  // namespace gshider
