#pragma once

#include <cstdint>
#include <vector>

#include "gshider/math.hpp"
#include "gshider/scene_model.hpp"

namespace gshider {

/// Low-pass floor added to the diagonal of every projected 2D covariance,
/// in px^2. Prevents sub-pixel degenerate splats.
inline constexpr double kCovarianceDilation = 0.3;

/// Pinhole camera. View space is right-handed with the camera looking down
/// +z; world-to-view is the rigid transform v = R*w + t.
struct Camera {
    int width = 0, height = 0;
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    Mat3 view_rotation = Mat3::identity();
    Vec3 view_translation;
    double near = 0.01, far = 100.0;

    Vec3 to_view(const Vec3& world) const { return view_rotation * world + view_translation; }

    /// Camera center in world coordinates (-R^T t).
    Vec3 center() const {
        Mat3 rt = view_rotation.transposed();
        Vec3 c = rt * view_translation;
        return {-c.x, -c.y, -c.z};
    }

    /// Builds from a camera-to-world rigid transform (rotation + origin).
    /// Throws if the rotation block is not orthonormal to 1e-6.
    static Camera from_camera_to_world(int width, int height, double fx, double fy,
                                       double cx, double cy, const Mat3& c2w_rotation,
                                       const Vec3& c2w_origin, double near = 0.01,
                                       double far = 100.0);

    void validate() const;  // throws std::invalid_argument
};

struct ProjectedMean {
    Vec2 pixel;    // image-plane position, px
    double depth;  // view-space z
    bool culled;   // true when depth <= near
};

ProjectedMean project_mean(const Camera& cam, const Vec3& mu);

/// EWA projection of a 3D covariance to screen space, plus the dilation
/// floor. `dilation` is exposed so tests can inspect the raw product.
Sym2 project_covariance(const Camera& cam, const Vec3& mu, const Mat3& sigma,
                        double dilation = kCovarianceDilation);

/// Indices of Gaussians that survive near/far and padded image-bounds
/// culling, sorted ascending by view depth (ties by index).
std::vector<std::uint32_t> frustum_cull(const GaussianCloud& cloud, const Camera& cam);

}  // namespace gshider
