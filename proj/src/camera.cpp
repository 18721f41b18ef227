#include "gshider/camera.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gshider {

void Camera::validate() const {
    if (width < 1 || height < 1)
        throw std::invalid_argument("Camera: image size must be at least 1x1");
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::invalid_argument("Camera: focal lengths must be positive");
    if (!(near > 0.0) || !(near < far))
        throw std::invalid_argument("Camera: need 0 < near < far");
    // Rotation block orthonormal to 1e-9.
    Mat3 rrt = view_rotation * view_rotation.transposed();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double expect = r == c ? 1.0 : 0.0;
            if (std::abs(rrt(r, c) - expect) > 1e-9)
                throw std::invalid_argument("Camera: rotation block not orthonormal");
        }
}

Camera Camera::from_camera_to_world(int width, int height, double fx, double fy,
                                    double cx, double cy, const Mat3& c2w_rotation,
                                    const Vec3& c2w_origin, double near, double far) {
    Mat3 rrt = c2w_rotation * c2w_rotation.transposed();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double expect = r == c ? 1.0 : 0.0;
            if (std::abs(rrt(r, c) - expect) > 1e-6)
                throw std::invalid_argument(
                    "camera-to-world rotation block not orthonormal");
        }
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.near = near;
    cam.far = far;
    cam.view_rotation = c2w_rotation.transposed();
    Vec3 t = cam.view_rotation * c2w_origin;
    cam.view_translation = {-t.x, -t.y, -t.z};
    cam.validate();
    return cam;
}

ProjectedMean project_mean(const Camera& cam, const Vec3& mu) {
    Vec3 t = cam.to_view(mu);
    ProjectedMean out;
    out.depth = t.z;
    if (t.z <= cam.near) {
        out.culled = true;
        out.pixel = {0.0, 0.0};
        return out;
    }
    out.culled = false;
    out.pixel = {cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy};
    return out;
}

Sym2 project_covariance(const Camera& cam, const Vec3& mu, const Mat3& sigma,
                        double dilation) {
    Vec3 t = cam.to_view(mu);
    if (!(t.z > 0.0))
        throw std::invalid_argument("project_covariance: point at or behind the camera");
    double inv_z = 1.0 / t.z;
    double inv_z2 = inv_z * inv_z;
    // J rows of the perspective Jacobian at t.
    double j00 = cam.fx * inv_z, j02 = -cam.fx * t.x * inv_z2;
    double j11 = cam.fy * inv_z, j12 = -cam.fy * t.y * inv_z2;

    // M = J * R_view, a 2x3.
    const Mat3& r = cam.view_rotation;
    double m0[3], m1[3];
    for (int c = 0; c < 3; ++c) {
        m0[c] = j00 * r(0, c) + j02 * r(2, c);
        m1[c] = j11 * r(1, c) + j12 * r(2, c);
    }
    // Sigma_hat = M Sigma M^T.
    double sm0[3], sm1[3];
    for (int rr = 0; rr < 3; ++rr) {
        sm0[rr] = sigma(rr, 0) * m0[0] + sigma(rr, 1) * m0[1] + sigma(rr, 2) * m0[2];
        sm1[rr] = sigma(rr, 0) * m1[0] + sigma(rr, 1) * m1[1] + sigma(rr, 2) * m1[2];
    }
    Sym2 out;
    out.xx = m0[0] * sm0[0] + m0[1] * sm0[1] + m0[2] * sm0[2] + dilation;
    out.xy = m0[0] * sm1[0] + m0[1] * sm1[1] + m0[2] * sm1[2];
    out.yy = m1[0] * sm1[0] + m1[1] * sm1[1] + m1[2] * sm1[2] + dilation;
    return out;
}

std::vector<std::uint32_t> frustum_cull(const GaussianCloud& cloud, const Camera& cam) {
    struct Entry {
        double depth;
        std::uint32_t index;
    };
    std::vector<Entry> kept;
    kept.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        ProjectedMean pm = project_mean(cam, cloud.position(i));
        if (pm.culled || !(pm.depth < cam.far)) continue;
        Mat3 sigma = build_covariance(cloud.rotation(i), cloud.activated_scale(i));
        Sym2 cov2 = project_covariance(cam, cloud.position(i), sigma);
        double pad = 3.0 * std::sqrt(std::max(cov2.max_eigenvalue(), 0.0));
        if (pm.pixel.x + pad < 0.0 || pm.pixel.x - pad > cam.width ||
            pm.pixel.y + pad < 0.0 || pm.pixel.y - pad > cam.height)
            continue;
        kept.push_back({pm.depth, static_cast<std::uint32_t>(i)});
    }
    std::stable_sort(kept.begin(), kept.end(), [](const Entry& a, const Entry& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    std::vector<std::uint32_t> out(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) out[i] = kept[i].index;
    return out;
}

}  // namespace gshider
