#pragma once

#include <cstdint>
#include <vector>

#include "gshider/camera.hpp"
#include "gshider/math.hpp"
#include "gshider/scene_model.hpp"

namespace gshider {

inline constexpr int kTileSize = 16;
/// Per-pixel support cutoff: contributions are evaluated only inside the
/// 3-sigma ellipse (Mahalanobis^2 <= 9), matching the tile binning bound so
/// tiled and untiled traversals composite identical sets.
inline constexpr double kSupportMahaSq = 9.0;
/// Compositing opacity clamp; keeps transmittance strictly positive so the
/// backward pass stays finite.
inline constexpr double kSigmaClamp = 0.99;

/// H x W x C grid of reals, row-major, channel-last.
struct FeatureImage {
    int height = 0, width = 0, channels = 0;
    std::vector<double> data;

    FeatureImage() = default;
    FeatureImage(int h, int w, int c)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, 0.0) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double* pixel(int y, int x) {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }
    const double* pixel(int y, int x) const {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }
    bool same_shape(const FeatureImage& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool all_finite() const;
};

struct RasterizeOptions {
    double sigma_min = 1.0 / 255.0;  // contribution skip threshold
    double t_stop = 1e-4;            // early termination transmittance
    int threads = 1;

    static RasterizeOptions no_skip(int threads = 1) { return {0.0, 0.0, threads}; }
};

/// One culled, projected Gaussian.
struct SplatScreen {
    std::uint32_t index;  // into the cloud
    Vec2 mean;            // px
    Sym2 inv_cov;         // inverse of the dilated 2D covariance
    double depth;
    double alpha;         // activated opacity
};

/// Forward-pass cache consumed by rasterize_backward.
struct RenderAux {
    int width = 0, height = 0, channels = 0;
    std::size_t cloud_size = 0;
    int tiles_x = 0, tiles_y = 0;
    RasterizeOptions options;
    std::vector<SplatScreen> splats;                      // depth-ascending
    std::vector<std::vector<std::uint32_t>> tile_splats;  // per tile, indices into splats
    std::vector<double> t_final;                          // H*W final transmittance
    std::vector<std::int32_t> last_contrib;  // H*W, index into the pixel's tile list
    std::vector<std::int32_t> contrib_count; // H*W, composited splats per pixel
};

/// Per-Gaussian compositing vectors for one view: the raw features in
/// Feature mode, or SH-evaluated colors in the SH modes (with the clamp
/// masks the backward pass needs).
struct CompositeValues {
    int channels = 0;
    std::vector<double> values;         // N x C
    std::vector<std::uint8_t> clamped;  // N x 3 in SH modes, else empty
};

CompositeValues composite_values(const GaussianCloud& cloud, const Camera& cam,
                                 bool second_sh = false);

/// Adjoint of composite_values. Feature mode: accumulates into
/// d_params (N x M). SH modes: accumulates into d_params (N x 48) and adds
/// the view-direction term to d_positions (N x 3, may be null).
void composite_values_backward(const GaussianCloud& cloud, const Camera& cam,
                               const CompositeValues& vals,
                               const std::vector<double>& d_values, bool second_sh,
                               double* d_params, double* d_positions);

/// Projects, culls, depth-sorts and (optionally) tile-bins the cloud.
/// Throws std::invalid_argument naming the Gaussian on non-finite
/// parameters. Degenerate (non-invertible) projected covariances are
/// dropped.
RenderAux prepare_scene(const GaussianCloud& cloud, const Camera& cam, int channels,
                        const RasterizeOptions& options, bool bounds_cull = true);

/// Tile-based front-to-back compositing of per-Gaussian vectors into an
/// H x W x C image. `values` is N x C; `background` has C entries and is
/// added weighted by the final transmittance.
FeatureImage rasterize_forward(const GaussianCloud& cloud, const Camera& cam,
                               const std::vector<double>& values,
                               const std::vector<double>& background,
                               const RasterizeOptions& options, RenderAux* aux_out);

/// Testing oracle: per-pixel loop over all depth-sorted Gaussians, no
/// tiling, accumulated in extended precision. Defaults to no contribution
/// skip and no early termination; pass explicit options to mirror the tiled
/// path's truncation.
FeatureImage rasterize_bruteforce(const GaussianCloud& cloud, const Camera& cam,
                                  const std::vector<double>& values,
                                  const std::vector<double>& background,
                                  const RasterizeOptions& options =
                                      RasterizeOptions::no_skip());

/// Gradients w.r.t. the stored (pre-activation) parameters.
struct RasterGrads {
    std::vector<double> values;      // N x C
    std::vector<double> positions;   // N x 3
    std::vector<double> rotations;   // N x 4
    std::vector<double> log_scales;  // N x 3
    std::vector<double> opacities;   // N
    /// Screen-space positional gradient norms in NDC units plus visibility,
    /// for adaptive density control.
    std::vector<double> mean2d_grad_ndc;
    std::vector<std::uint8_t> visible;
};

/// Exact adjoint of rasterize_forward for the aux it produced (including
/// skip, clamp and early-stop behavior). Gradient partials are tile-private
/// and merged in a fixed order, so results are bit-identical for any thread
/// count.
RasterGrads rasterize_backward(const GaussianCloud& cloud, const Camera& cam,
                               const std::vector<double>& values,
                               const std::vector<double>& background,
                               const RenderAux& aux, const FeatureImage& d_output);

/// Convenience: renders the cloud's own appearance (feature image or SH
/// color image depending on mode).
FeatureImage render_image(const GaussianCloud& cloud, const Camera& cam,
                          const std::vector<double>& background,
                          const RasterizeOptions& options, bool second_sh = false,
                          RenderAux* aux_out = nullptr);

}  // namespace gshider
