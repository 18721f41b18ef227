#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gshider/math.hpp"
#include "gshider/rng.hpp"

namespace gshider {

/// How per-Gaussian appearance is parameterized.
enum class CloudMode {
    Feature,   // M-dimensional coupled feature vector per Gaussian
    Sh,        // degree-3 SH color coefficients (plain splatting)
    ShDouble,  // two independent SH sets over shared geometry
};

std::string to_string(CloudMode mode);
CloudMode cloud_mode_from_string(const std::string& s);

inline constexpr int kShDegree = 3;
inline constexpr int kShCoeffsPerChannel = (kShDegree + 1) * (kShDegree + 1);  // 16
inline constexpr int kShCoeffCount = 3 * kShCoeffsPerChannel;                  // 48

/// Learnable scene: structure-of-arrays over Gaussians. Parameters are kept
/// in their optimization spaces (log scale, pre-sigmoid opacity, raw
/// quaternion) and stored as float32 so persistence round-trips exactly;
/// all math promotes to double.
struct GaussianCloud {
    std::vector<float> positions;   // N x 3, world units
    std::vector<float> rotations;   // N x 4, quaternion (w, x, y, z), normalized at use
    std::vector<float> log_scales;  // N x 3
    std::vector<float> opacities;   // N, pre-sigmoid
    std::vector<float> features;    // N x M          (Feature mode)
    std::vector<float> sh;          // N x 48         (Sh / ShDouble modes)
    std::vector<float> sh2;         // N x 48         (ShDouble mode only)

    CloudMode mode = CloudMode::Feature;
    int feature_dim = 0;        // M; 0 in SH modes
    double scene_extent = 1.0;  // cached for density-control thresholds

    std::size_t size() const { return opacities.size(); }

    Vec3 position(std::size_t i) const {
        return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
    }
    Vec4 rotation(std::size_t i) const {
        return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2],
                rotations[4 * i + 3]};
    }
    Vec3 activated_scale(std::size_t i) const {
        return {std::exp(static_cast<double>(log_scales[3 * i])),
                std::exp(static_cast<double>(log_scales[3 * i + 1])),
                std::exp(static_cast<double>(log_scales[3 * i + 2]))};
    }
    double activated_opacity(std::size_t i) const {
        return sigmoid(static_cast<double>(opacities[i]));
    }

    /// Number of per-Gaussian appearance channels rendered by the rasterizer
    /// (M in feature mode, 3 in SH modes).
    int render_channels() const { return mode == CloudMode::Feature ? feature_dim : 3; }

    void validate() const;  // throws std::invalid_argument on shape mismatch
};

/// Covariance of one Gaussian: R(q) diag(s)^2 R(q)^T. Eigenvalues are the
/// squared scales.
Mat3 build_covariance(const Vec4& q, const Vec3& s);

/// SH color for a view direction: sum of basis(dir) * coeffs + 0.5, clamped
/// at zero per channel. `coeffs` holds 48 values laid out channel-major
/// (16 coefficients for R, then G, then B). `clamped`, when non-null,
/// receives the per-channel at-zero mask for the backward pass.
Vec3 evaluate_sh(const float* coeffs, const Vec3& dir, bool clamped[3] = nullptr);

/// Adjoint of evaluate_sh: accumulates coefficient gradients and returns the
/// gradient w.r.t. the (unnormalized) direction vector.
Vec3 evaluate_sh_backward(const float* coeffs, const Vec3& dir, const bool clamped[3],
                          const Vec3& d_rgb, double* d_coeffs);

struct SeedPoint {
    Vec3 position;
    Vec3 rgb;
};

inline constexpr double kInitOpacity = 0.1;      // activated
inline constexpr double kInitFeatureStd = 0.1;

/// Builds a cloud from explicit seed points: scales from mean
/// nearest-neighbor distance, identity rotations, opacity at the initial
/// constant, features ~ N(0, kInitFeatureStd^2) (seeded) or SH DC terms from
/// the seed colors.
GaussianCloud init_cloud(const std::vector<SeedPoint>& seeds, int feature_dim,
                         CloudMode mode, std::uint64_t seed);

/// Builds a cloud of `count` Gaussians uniform in the axis-aligned box
/// [box_min, box_max], with mid-gray seed colors.
GaussianCloud init_cloud_in_box(std::size_t count, const Vec3& box_min,
                                const Vec3& box_max, int feature_dim, CloudMode mode,
                                std::uint64_t seed);

}  // namespace gshider
