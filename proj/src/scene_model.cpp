#include "gshider/scene_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gshider {

namespace {

// Real SH basis constants, graphics convention.
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

// Basis values for all 16 degree-3 functions at a normalized direction.
void sh_basis(const Vec3& d, double basis[kShCoeffsPerChannel]) {
    double x = d.x, y = d.y, z = d.z;
    basis[0] = kC0;
    basis[1] = -kC1 * y;
    basis[2] = kC1 * z;
    basis[3] = -kC1 * x;
    double xx = x * x, yy = y * y, zz = z * z;
    double xy = x * y, yz = y * z, xz = x * z;
    basis[4] = kC2[0] * xy;
    basis[5] = kC2[1] * yz;
    basis[6] = kC2[2] * (2.0 * zz - xx - yy);
    basis[7] = kC2[3] * xz;
    basis[8] = kC2[4] * (xx - yy);
    basis[9] = kC3[0] * y * (3.0 * xx - yy);
    basis[10] = kC3[1] * xy * z;
    basis[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    basis[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    basis[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    basis[14] = kC3[5] * z * (xx - yy);
    basis[15] = kC3[6] * x * (xx - 3.0 * yy);
}

// d(basis)/d(x,y,z) at a normalized direction, one row per basis function.
void sh_basis_grad(const Vec3& d, double gx[16], double gy[16], double gz[16]) {
    double x = d.x, y = d.y, z = d.z;
    double xx = x * x, yy = y * y, zz = z * z;
    for (int i = 0; i < 16; ++i) gx[i] = gy[i] = gz[i] = 0.0;
    gy[1] = -kC1;
    gz[2] = kC1;
    gx[3] = -kC1;
    gx[4] = kC2[0] * y;  gy[4] = kC2[0] * x;
    gy[5] = kC2[1] * z;  gz[5] = kC2[1] * y;
    gx[6] = kC2[2] * (-2.0 * x);  gy[6] = kC2[2] * (-2.0 * y);  gz[6] = kC2[2] * 4.0 * z;
    gx[7] = kC2[3] * z;  gz[7] = kC2[3] * x;
    gx[8] = kC2[4] * 2.0 * x;  gy[8] = kC2[4] * (-2.0 * y);
    gx[9] = kC3[0] * 6.0 * x * y;          gy[9] = kC3[0] * (3.0 * xx - 3.0 * yy);
    gx[10] = kC3[1] * y * z;  gy[10] = kC3[1] * x * z;  gz[10] = kC3[1] * x * y;
    gx[11] = kC3[2] * (-2.0 * x * y);
    gy[11] = kC3[2] * (4.0 * zz - xx - 3.0 * yy);
    gz[11] = kC3[2] * 8.0 * y * z;
    gx[12] = kC3[3] * (-6.0 * x * z);
    gy[12] = kC3[3] * (-6.0 * y * z);
    gz[12] = kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
    gx[13] = kC3[4] * (4.0 * zz - 3.0 * xx - yy);
    gy[13] = kC3[4] * (-2.0 * x * y);
    gz[13] = kC3[4] * 8.0 * x * z;
    gx[14] = kC3[5] * 2.0 * x * z;  gy[14] = kC3[5] * (-2.0 * y * z);  gz[14] = kC3[5] * (xx - yy);
    gx[15] = kC3[6] * (3.0 * xx - 3.0 * yy);  gy[15] = kC3[6] * (-6.0 * x * y);
}

}  // namespace

std::string to_string(CloudMode mode) {
    switch (mode) {
    case CloudMode::Feature: return "feature";
    case CloudMode::Sh: return "sh";
    case CloudMode::ShDouble: return "sh-double";
    }
    return "feature";
}

CloudMode cloud_mode_from_string(const std::string& s) {
    if (s == "feature") return CloudMode::Feature;
    if (s == "sh") return CloudMode::Sh;
    if (s == "sh-double") return CloudMode::ShDouble;
    throw std::invalid_argument("unknown cloud mode: " + s);
}

void GaussianCloud::validate() const {
    std::size_t n = size();
    if (positions.size() != 3 * n || rotations.size() != 4 * n ||
        log_scales.size() != 3 * n)
        throw std::invalid_argument("GaussianCloud: parameter array shape mismatch");
    if (mode == CloudMode::Feature) {
        if (feature_dim < 1) throw std::invalid_argument("GaussianCloud: feature_dim < 1");
        if (features.size() != static_cast<std::size_t>(feature_dim) * n)
            throw std::invalid_argument("GaussianCloud: feature array shape mismatch");
    } else {
        if (sh.size() != static_cast<std::size_t>(kShCoeffCount) * n)
            throw std::invalid_argument("GaussianCloud: sh array shape mismatch");
        if (mode == CloudMode::ShDouble &&
            sh2.size() != static_cast<std::size_t>(kShCoeffCount) * n)
            throw std::invalid_argument("GaussianCloud: sh2 array shape mismatch");
    }
}

Mat3 build_covariance(const Vec4& q, const Vec3& s) {
    if (!std::isfinite(q.norm()) || !std::isfinite(s.x) || !std::isfinite(s.y) ||
        !std::isfinite(s.z))
        throw std::invalid_argument("build_covariance: non-finite input");
    if (!(s.x > 0.0 && s.y > 0.0 && s.z > 0.0))
        throw std::invalid_argument("build_covariance: scales must be positive");
    Mat3 r = quat_to_rotation(q);
    // Sigma = (R S)(R S)^T with S = diag(s).
    Mat3 n;
    for (int row = 0; row < 3; ++row) {
        n(row, 0) = r(row, 0) * s.x;
        n(row, 1) = r(row, 1) * s.y;
        n(row, 2) = r(row, 2) * s.z;
    }
    Mat3 sigma;
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col)
            sigma(row, col) =
                n(row, 0) * n(col, 0) + n(row, 1) * n(col, 1) + n(row, 2) * n(col, 2);
    return sigma;
}

Vec3 evaluate_sh(const float* coeffs, const Vec3& dir, bool clamped[3]) {
    double n = dir.norm();
    if (!(n > 0.0) || !std::isfinite(n))
        throw std::invalid_argument("evaluate_sh: zero-length or non-finite direction");
    Vec3 d = dir * (1.0 / n);
    double basis[kShCoeffsPerChannel];
    sh_basis(d, basis);
    Vec3 rgb;
    double* out[3] = {&rgb.x, &rgb.y, &rgb.z};
    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        const float* c = coeffs + ch * kShCoeffsPerChannel;
        for (int k = 0; k < kShCoeffsPerChannel; ++k) acc += basis[k] * c[k];
        acc += 0.5;
        bool below = acc < 0.0;
        if (clamped) clamped[ch] = below;
        *out[ch] = below ? 0.0 : acc;
    }
    return rgb;
}

Vec3 evaluate_sh_backward(const float* coeffs, const Vec3& dir, const bool clamped[3],
                          const Vec3& d_rgb, double* d_coeffs) {
    double n = dir.norm();
    Vec3 d = dir * (1.0 / n);
    double basis[16], gx[16], gy[16], gz[16];
    sh_basis(d, basis);
    sh_basis_grad(d, gx, gy, gz);
    double up[3] = {clamped[0] ? 0.0 : d_rgb.x, clamped[1] ? 0.0 : d_rgb.y,
                    clamped[2] ? 0.0 : d_rgb.z};
    Vec3 dd;  // gradient w.r.t. normalized direction
    for (int ch = 0; ch < 3; ++ch) {
        const float* c = coeffs + ch * kShCoeffsPerChannel;
        double* g = d_coeffs + ch * kShCoeffsPerChannel;
        for (int k = 0; k < kShCoeffsPerChannel; ++k) {
            g[k] += up[ch] * basis[k];
            dd.x += up[ch] * gx[k] * c[k];
            dd.y += up[ch] * gy[k] * c[k];
            dd.z += up[ch] * gz[k] * c[k];
        }
    }
    // Chain through normalization: d = dir / |dir|.
    double inv = 1.0 / n;
    double proj = dd.dot(d);
    return {(dd.x - proj * d.x) * inv, (dd.y - proj * d.y) * inv,
            (dd.z - proj * d.z) * inv};
}

namespace {

// Mean distance to the 3 nearest neighbors, brute force. Desk-scale clouds
// are small enough that O(N^2) is fine at init time.
std::vector<double> mean_neighbor_distances(const std::vector<SeedPoint>& seeds) {
    std::size_t n = seeds.size();
    std::vector<double> out(n, 0.01);
    if (n < 2) return out;
    std::size_t k = std::min<std::size_t>(3, n - 1);
    std::vector<double> best(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = (seeds[j].position - seeds[i].position).dot(
                seeds[j].position - seeds[i].position);
            // insertion into the small sorted best-k buffer
            if (d2 < best[k - 1]) {
                std::size_t p = k - 1;
                while (p > 0 && best[p - 1] > d2) {
                    best[p] = best[p - 1];
                    --p;
                }
                best[p] = d2;
            }
        }
        double sum = 0.0;
        for (double b : best) sum += std::sqrt(b);
        out[i] = std::max(sum / static_cast<double>(k), 1e-7);
    }
    return out;
}

double extent_of(const std::vector<SeedPoint>& seeds) {
    Vec3 lo = seeds[0].position, hi = seeds[0].position;
    for (const auto& s : seeds) {
        lo.x = std::min(lo.x, s.position.x);
        lo.y = std::min(lo.y, s.position.y);
        lo.z = std::min(lo.z, s.position.z);
        hi.x = std::max(hi.x, s.position.x);
        hi.y = std::max(hi.y, s.position.y);
        hi.z = std::max(hi.z, s.position.z);
    }
    double ext = 0.5 * (hi - lo).norm();
    return ext > 0.0 ? ext : 1.0;
}

}  // namespace

GaussianCloud init_cloud(const std::vector<SeedPoint>& seeds, int feature_dim,
                         CloudMode mode, std::uint64_t seed) {
    if (seeds.empty()) throw std::invalid_argument("init_cloud: no seed points");
    if (mode == CloudMode::Feature && feature_dim < 1)
        throw std::invalid_argument("init_cloud: feature_dim must be >= 1");

    GaussianCloud cloud;
    cloud.mode = mode;
    cloud.feature_dim = mode == CloudMode::Feature ? feature_dim : 0;
    cloud.scene_extent = extent_of(seeds);

    std::size_t n = seeds.size();
    cloud.positions.resize(3 * n);
    cloud.rotations.resize(4 * n);
    cloud.log_scales.resize(3 * n);
    cloud.opacities.resize(n);
    if (mode == CloudMode::Feature) {
        cloud.features.resize(static_cast<std::size_t>(feature_dim) * n);
    } else {
        cloud.sh.assign(static_cast<std::size_t>(kShCoeffCount) * n, 0.0f);
        if (mode == CloudMode::ShDouble)
            cloud.sh2.assign(static_cast<std::size_t>(kShCoeffCount) * n, 0.0f);
    }

    std::vector<double> nn = mean_neighbor_distances(seeds);
    Rng rng(seed);
    float opacity_pre = static_cast<float>(logit(kInitOpacity));
    for (std::size_t i = 0; i < n; ++i) {
        cloud.positions[3 * i] = static_cast<float>(seeds[i].position.x);
        cloud.positions[3 * i + 1] = static_cast<float>(seeds[i].position.y);
        cloud.positions[3 * i + 2] = static_cast<float>(seeds[i].position.z);
        cloud.rotations[4 * i] = 1.0f;
        float ls = static_cast<float>(std::log(nn[i]));
        cloud.log_scales[3 * i] = ls;
        cloud.log_scales[3 * i + 1] = ls;
        cloud.log_scales[3 * i + 2] = ls;
        cloud.opacities[i] = opacity_pre;
        if (mode == CloudMode::Feature) {
            for (int c = 0; c < feature_dim; ++c)
                cloud.features[static_cast<std::size_t>(feature_dim) * i + c] =
                    static_cast<float>(rng.normal(0.0, kInitFeatureStd));
        } else {
            const double rgb[3] = {seeds[i].rgb.x, seeds[i].rgb.y, seeds[i].rgb.z};
            for (int ch = 0; ch < 3; ++ch) {
                float dc = static_cast<float>((rgb[ch] - 0.5) / kC0);
                cloud.sh[static_cast<std::size_t>(kShCoeffCount) * i +
                         static_cast<std::size_t>(ch) * kShCoeffsPerChannel] = dc;
                if (mode == CloudMode::ShDouble)
                    cloud.sh2[static_cast<std::size_t>(kShCoeffCount) * i +
                              static_cast<std::size_t>(ch) * kShCoeffsPerChannel] = dc;
            }
        }
    }
    return cloud;
}

GaussianCloud init_cloud_in_box(std::size_t count, const Vec3& box_min,
                                const Vec3& box_max, int feature_dim, CloudMode mode,
                                std::uint64_t seed) {
    if (count == 0) throw std::invalid_argument("init_cloud_in_box: count must be >= 1");
    Rng rng(seed);
    std::vector<SeedPoint> seeds(count);
    for (auto& s : seeds) {
        s.position = {rng.uniform(box_min.x, box_max.x), rng.uniform(box_min.y, box_max.y),
                      rng.uniform(box_min.z, box_max.z)};
        s.rgb = {0.5, 0.5, 0.5};
    }
    // Re-seed the parameter stream so clouds with equal seeds are identical
    // whether seeds came from a dataset or from this box sampler.
    return init_cloud(seeds, feature_dim, mode, seed ^ 0xB0B0B0B0ull);
}

}  // namespace gshider
