#include "gshider/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gshider/thread_pool.hpp"

namespace gshider {

bool FeatureImage::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

CompositeValues composite_values(const GaussianCloud& cloud, const Camera& cam,
                                 bool second_sh) {
    cloud.validate();
    CompositeValues out;
    std::size_t n = cloud.size();
    if (cloud.mode == CloudMode::Feature) {
        out.channels = cloud.feature_dim;
        out.values.resize(n * static_cast<std::size_t>(out.channels));
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] = static_cast<double>(cloud.features[i]);
        return out;
    }
    if (second_sh && cloud.mode != CloudMode::ShDouble)
        throw std::invalid_argument("composite_values: cloud has no second SH set");
    const std::vector<float>& coeffs = second_sh ? cloud.sh2 : cloud.sh;
    out.channels = 3;
    out.values.resize(n * 3);
    out.clamped.resize(n * 3);
    Vec3 cam_center = cam.center();
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 dir = cloud.position(i) - cam_center;
        if (!(dir.norm() > 0.0)) dir = {0.0, 0.0, 1.0};
        bool cl[3];
        Vec3 rgb = evaluate_sh(coeffs.data() + i * kShCoeffCount, dir, cl);
        out.values[3 * i] = rgb.x;
        out.values[3 * i + 1] = rgb.y;
        out.values[3 * i + 2] = rgb.z;
        for (int c = 0; c < 3; ++c) out.clamped[3 * i + c] = cl[c] ? 1 : 0;
    }
    return out;
}

void composite_values_backward(const GaussianCloud& cloud, const Camera& cam,
                               const CompositeValues& vals,
                               const std::vector<double>& d_values, bool second_sh,
                               double* d_params, double* d_positions) {
    std::size_t n = cloud.size();
    if (d_values.size() != n * static_cast<std::size_t>(vals.channels))
        throw std::invalid_argument("composite_values_backward: gradient shape mismatch");
    if (cloud.mode == CloudMode::Feature) {
        for (std::size_t i = 0; i < d_values.size(); ++i) d_params[i] += d_values[i];
        return;
    }
    const std::vector<float>& coeffs = second_sh ? cloud.sh2 : cloud.sh;
    Vec3 cam_center = cam.center();
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 d_rgb = {d_values[3 * i], d_values[3 * i + 1], d_values[3 * i + 2]};
        if (d_rgb.x == 0.0 && d_rgb.y == 0.0 && d_rgb.z == 0.0) continue;
        Vec3 dir = cloud.position(i) - cam_center;
        if (!(dir.norm() > 0.0)) dir = {0.0, 0.0, 1.0};
        bool cl[3] = {vals.clamped[3 * i] != 0, vals.clamped[3 * i + 1] != 0,
                      vals.clamped[3 * i + 2] != 0};
        Vec3 d_dir = evaluate_sh_backward(coeffs.data() + i * kShCoeffCount, dir, cl,
                                          d_rgb, d_params + i * kShCoeffCount);
        if (d_positions) {
            d_positions[3 * i] += d_dir.x;
            d_positions[3 * i + 1] += d_dir.y;
            d_positions[3 * i + 2] += d_dir.z;
        }
    }
}

namespace {

void check_finite_params(const GaussianCloud& cloud) {
    std::size_t n = cloud.size();
    for (std::size_t i = 0; i < n; ++i) {
        bool ok = std::isfinite(cloud.opacities[i]);
        for (int k = 0; k < 3 && ok; ++k)
            ok = std::isfinite(cloud.positions[3 * i + k]) &&
                 std::isfinite(cloud.log_scales[3 * i + k]);
        for (int k = 0; k < 4 && ok; ++k) ok = std::isfinite(cloud.rotations[4 * i + k]);
        if (!ok)
            throw std::invalid_argument("non-finite parameter at Gaussian " +
                                        std::to_string(i));
    }
}

void check_finite_values(const std::vector<double>& values, int channels) {
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i]))
            throw std::invalid_argument("non-finite compositing value at Gaussian " +
                                        std::to_string(i / channels));
}

inline double mahalanobis_sq(const Sym2& a, double dx, double dy) {
    return a.xx * dx * dx + 2.0 * a.xy * dx * dy + a.yy * dy * dy;
}

}  // namespace

RenderAux prepare_scene(const GaussianCloud& cloud, const Camera& cam, int channels,
                        const RasterizeOptions& options, bool bounds_cull) {
    cloud.validate();
    cam.validate();
    check_finite_params(cloud);

    RenderAux aux;
    aux.width = cam.width;
    aux.height = cam.height;
    aux.channels = channels;
    aux.cloud_size = cloud.size();
    aux.options = options;
    aux.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    aux.tiles_y = (cam.height + kTileSize - 1) / kTileSize;

    struct Candidate {
        double depth;
        std::uint32_t index;
        Vec2 mean;
        Sym2 cov;
    };
    std::vector<Candidate> kept;
    kept.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        ProjectedMean pm = project_mean(cam, cloud.position(i));
        if (pm.culled || !(pm.depth < cam.far)) continue;
        Mat3 sigma = build_covariance(cloud.rotation(i), cloud.activated_scale(i));
        Sym2 cov2 = project_covariance(cam, cloud.position(i), sigma);
        double det = cov2.det();
        if (!(det > 0.0) || !std::isfinite(det)) continue;  // degenerate, skipped
        if (bounds_cull) {
            double pad = 3.0 * std::sqrt(std::max(cov2.max_eigenvalue(), 0.0));
            if (pm.pixel.x + pad < 0.0 || pm.pixel.x - pad > cam.width ||
                pm.pixel.y + pad < 0.0 || pm.pixel.y - pad > cam.height)
                continue;
        }
        kept.push_back({pm.depth, static_cast<std::uint32_t>(i), pm.pixel, cov2});
    }
    std::stable_sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });

    aux.splats.resize(kept.size());
    aux.tile_splats.assign(static_cast<std::size_t>(aux.tiles_x) * aux.tiles_y, {});
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const Candidate& c = kept[k];
        aux.splats[k] = {c.index, c.mean, c.cov.inverse(), c.depth,
                         cloud.activated_opacity(c.index)};
        // Bin to tiles covering the 3-sigma ellipse bounding box.
        double hx = 3.0 * std::sqrt(std::max(c.cov.xx, 0.0));
        double hy = 3.0 * std::sqrt(std::max(c.cov.yy, 0.0));
        int x0 = std::clamp(static_cast<int>(std::floor((c.mean.x - hx) / kTileSize)), 0,
                            aux.tiles_x - 1);
        int x1 = std::clamp(static_cast<int>(std::floor((c.mean.x + hx) / kTileSize)), 0,
                            aux.tiles_x - 1);
        int y0 = std::clamp(static_cast<int>(std::floor((c.mean.y - hy) / kTileSize)), 0,
                            aux.tiles_y - 1);
        int y1 = std::clamp(static_cast<int>(std::floor((c.mean.y + hy) / kTileSize)), 0,
                            aux.tiles_y - 1);
        if (c.mean.x + hx < 0.0 || c.mean.x - hx > cam.width || c.mean.y + hy < 0.0 ||
            c.mean.y - hy > cam.height)
            continue;  // bbox misses the image entirely
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                aux.tile_splats[static_cast<std::size_t>(ty) * aux.tiles_x + tx].push_back(
                    static_cast<std::uint32_t>(k));
    }
    return aux;
}

FeatureImage rasterize_forward(const GaussianCloud& cloud, const Camera& cam,
                               const std::vector<double>& values,
                               const std::vector<double>& background,
                               const RasterizeOptions& options, RenderAux* aux_out) {
    int channels = static_cast<int>(background.size());
    if (channels < 1) throw std::invalid_argument("rasterize_forward: empty background");
    if (values.size() != cloud.size() * static_cast<std::size_t>(channels))
        throw std::invalid_argument("rasterize_forward: values shape mismatch");
    check_finite_values(values, channels);

    RenderAux aux = prepare_scene(cloud, cam, channels, options);
    FeatureImage out(cam.height, cam.width, channels);
    std::size_t npix = static_cast<std::size_t>(cam.height) * cam.width;
    aux.t_final.assign(npix, 1.0);
    aux.last_contrib.assign(npix, -1);
    aux.contrib_count.assign(npix, 0);

    std::size_t num_tiles = aux.tile_splats.size();
    parallel_chunks(num_tiles, options.threads, [&](std::size_t tile) {
        const std::vector<std::uint32_t>& list = aux.tile_splats[tile];
        int tx = static_cast<int>(tile % aux.tiles_x);
        int ty = static_cast<int>(tile / aux.tiles_x);
        int x_begin = tx * kTileSize, x_end = std::min(cam.width, x_begin + kTileSize);
        int y_begin = ty * kTileSize, y_end = std::min(cam.height, y_begin + kTileSize);
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = x_begin; x < x_end; ++x) {
                double px = x + 0.5, py = y + 0.5;
                double t = 1.0;
                std::int32_t last = -1;
                std::int32_t count = 0;
                double* pix = out.pixel(y, x);
                for (std::size_t k = 0; k < list.size(); ++k) {
                    const SplatScreen& s = aux.splats[list[k]];
                    double dx = px - s.mean.x, dy = py - s.mean.y;
                    double maha = mahalanobis_sq(s.inv_cov, dx, dy);
                    if (maha > kSupportMahaSq) continue;
                    double sigma = s.alpha * std::exp(-0.5 * maha);
                    if (sigma > kSigmaClamp) sigma = kSigmaClamp;
                    if (sigma < options.sigma_min) continue;
                    double w = sigma * t;
                    const double* v =
                        values.data() + static_cast<std::size_t>(s.index) * channels;
                    for (int c = 0; c < channels; ++c) pix[c] += w * v[c];
                    last = static_cast<std::int32_t>(k);
                    ++count;
                    t *= 1.0 - sigma;
                    if (t < options.t_stop) break;
                }
                std::size_t pi = static_cast<std::size_t>(y) * cam.width + x;
                aux.t_final[pi] = t;
                aux.last_contrib[pi] = last;
                aux.contrib_count[pi] = count;
                for (int c = 0; c < channels; ++c) pix[c] += background[c] * t;
            }
        }
    });

    if (aux_out) *aux_out = std::move(aux);
    return out;
}

FeatureImage rasterize_bruteforce(const GaussianCloud& cloud, const Camera& cam,
                                  const std::vector<double>& values,
                                  const std::vector<double>& background,
                                  const RasterizeOptions& options) {
    int channels = static_cast<int>(background.size());
    if (channels < 1) throw std::invalid_argument("rasterize_bruteforce: empty background");
    if (values.size() != cloud.size() * static_cast<std::size_t>(channels))
        throw std::invalid_argument("rasterize_bruteforce: values shape mismatch");
    check_finite_values(values, channels);

    RenderAux aux = prepare_scene(cloud, cam, channels, options, /*bounds_cull=*/false);
    FeatureImage out(cam.height, cam.width, channels);
    std::vector<long double> acc(static_cast<std::size_t>(channels));
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double px = x + 0.5, py = y + 0.5;
            std::fill(acc.begin(), acc.end(), 0.0L);
            long double t = 1.0L;
            for (const SplatScreen& s : aux.splats) {
                double dx = px - s.mean.x, dy = py - s.mean.y;
                double maha = mahalanobis_sq(s.inv_cov, dx, dy);
                if (maha > kSupportMahaSq) continue;
                double sigma = s.alpha * std::exp(-0.5 * maha);
                if (sigma > kSigmaClamp) sigma = kSigmaClamp;
                if (sigma < options.sigma_min) continue;
                long double w = static_cast<long double>(sigma) * t;
                const double* v =
                    values.data() + static_cast<std::size_t>(s.index) * channels;
                for (int c = 0; c < channels; ++c) acc[c] += w * v[c];
                t *= 1.0L - static_cast<long double>(sigma);
                if (t < static_cast<long double>(options.t_stop)) break;
            }
            double* pix = out.pixel(y, x);
            for (int c = 0; c < channels; ++c)
                pix[c] = static_cast<double>(acc[c] + t * background[c]);
        }
    }
    return out;
}

namespace {

// Tile-private gradient partials, indexed by position in the tile list.
struct TilePartials {
    std::vector<double> values;   // len x C
    std::vector<double> alpha;    // len (activated-opacity gradient)
    std::vector<double> mean;     // len x 2
    std::vector<double> inv_cov;  // len x 3 (xx, xy, yy as symmetric parameters)
    void resize(std::size_t len, int channels) {
        values.assign(len * channels, 0.0);
        alpha.assign(len, 0.0);
        mean.assign(len * 2, 0.0);
        inv_cov.assign(len * 3, 0.0);
    }
};

}  // namespace

RasterGrads rasterize_backward(const GaussianCloud& cloud, const Camera& cam,
                               const std::vector<double>& values,
                               const std::vector<double>& background,
                               const RenderAux& aux, const FeatureImage& d_output) {
    int channels = aux.channels;
    if (d_output.height != aux.height || d_output.width != aux.width ||
        d_output.channels != channels || aux.cloud_size != cloud.size() ||
        values.size() != cloud.size() * static_cast<std::size_t>(channels) ||
        background.size() != static_cast<std::size_t>(channels))
        throw std::invalid_argument("rasterize_backward: aux does not match inputs");
    if (!d_output.all_finite())
        throw std::invalid_argument("rasterize_backward: non-finite upstream gradient");

    std::size_t n = cloud.size();
    RasterGrads g;
    g.values.assign(n * channels, 0.0);
    g.positions.assign(n * 3, 0.0);
    g.rotations.assign(n * 4, 0.0);
    g.log_scales.assign(n * 3, 0.0);
    g.opacities.assign(n, 0.0);
    g.mean2d_grad_ndc.assign(n, 0.0);
    g.visible.assign(n, 0);

    std::size_t num_tiles = aux.tile_splats.size();
    std::vector<TilePartials> partials(num_tiles);

    parallel_chunks(num_tiles, aux.options.threads, [&](std::size_t tile) {
        const std::vector<std::uint32_t>& list = aux.tile_splats[tile];
        if (list.empty()) return;
        TilePartials& tp = partials[tile];
        tp.resize(list.size(), channels);
        int tx = static_cast<int>(tile % aux.tiles_x);
        int ty = static_cast<int>(tile / aux.tiles_x);
        int x_begin = tx * kTileSize, x_end = std::min(aux.width, x_begin + kTileSize);
        int y_begin = ty * kTileSize, y_end = std::min(aux.height, y_begin + kTileSize);
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = x_begin; x < x_end; ++x) {
                std::size_t pi = static_cast<std::size_t>(y) * aux.width + x;
                std::int32_t last = aux.last_contrib[pi];
                if (last < 0) continue;
                const double* up = d_output.pixel(y, x);
                double px = x + 0.5, py = y + 0.5;
                double t_after = aux.t_final[pi];
                double bg_dot = 0.0;
                for (int c = 0; c < channels; ++c) bg_dot += background[c] * up[c];
                double suffix = t_after * bg_dot;
                // Replay composited splats back to front.
                for (std::int32_t k = last; k >= 0; --k) {
                    const SplatScreen& s = aux.splats[list[k]];
                    double dx = px - s.mean.x, dy = py - s.mean.y;
                    double maha = mahalanobis_sq(s.inv_cov, dx, dy);
                    if (maha > kSupportMahaSq) continue;
                    double sigma_raw = s.alpha * std::exp(-0.5 * maha);
                    bool clamped = sigma_raw > kSigmaClamp;
                    double sigma = clamped ? kSigmaClamp : sigma_raw;
                    if (sigma < aux.options.sigma_min) continue;
                    double t_before = t_after / (1.0 - sigma);
                    double w = sigma * t_before;
                    const double* v =
                        values.data() + static_cast<std::size_t>(s.index) * channels;
                    double fg = 0.0;
                    double* dv = tp.values.data() + static_cast<std::size_t>(k) * channels;
                    for (int c = 0; c < channels; ++c) {
                        fg += v[c] * up[c];
                        dv[c] += w * up[c];
                    }
                    double d_sigma = t_before * fg - suffix / (1.0 - sigma);
                    if (!clamped) {
                        double expo = std::exp(-0.5 * maha);
                        tp.alpha[k] += d_sigma * expo;
                        double d_maha = -0.5 * d_sigma * sigma;
                        tp.inv_cov[3 * k] += d_maha * dx * dx;
                        tp.inv_cov[3 * k + 1] += d_maha * 2.0 * dx * dy;
                        tp.inv_cov[3 * k + 2] += d_maha * dy * dy;
                        double ddx = d_maha * 2.0 * (s.inv_cov.xx * dx + s.inv_cov.xy * dy);
                        double ddy = d_maha * 2.0 * (s.inv_cov.xy * dx + s.inv_cov.yy * dy);
                        tp.mean[2 * k] -= ddx;
                        tp.mean[2 * k + 1] -= ddy;
                    }
                    suffix += w * fg;
                    t_after = t_before;
                }
            }
        }
    });

    // Fixed-order merge (tiles ascending, entries ascending) into per-Gaussian
    // accumulators keyed by splat order; bit-identical across thread counts.
    std::size_t ns = aux.splats.size();
    std::vector<double> d_alpha(ns, 0.0), d_mean(ns * 2, 0.0), d_icov(ns * 3, 0.0);
    for (std::size_t tile = 0; tile < num_tiles; ++tile) {
        const std::vector<std::uint32_t>& list = aux.tile_splats[tile];
        if (list.empty() || partials[tile].alpha.empty()) continue;
        const TilePartials& tp = partials[tile];
        for (std::size_t k = 0; k < list.size(); ++k) {
            std::uint32_t sp = list[k];
            const SplatScreen& s = aux.splats[sp];
            double* dvg = g.values.data() + static_cast<std::size_t>(s.index) * channels;
            const double* dvp = tp.values.data() + k * channels;
            for (int c = 0; c < channels; ++c) dvg[c] += dvp[c];
            d_alpha[sp] += tp.alpha[k];
            d_mean[2 * sp] += tp.mean[2 * k];
            d_mean[2 * sp + 1] += tp.mean[2 * k + 1];
            d_icov[3 * sp] += tp.inv_cov[3 * k];
            d_icov[3 * sp + 1] += tp.inv_cov[3 * k + 1];
            d_icov[3 * sp + 2] += tp.inv_cov[3 * k + 2];
        }
    }

    // Per-splat epilogue: chain screen-space gradients through projection,
    // covariance construction and activations. Disjoint writes per splat.
    parallel_chunks(ns, aux.options.threads, [&](std::size_t sp) {
        const SplatScreen& s = aux.splats[sp];
        std::size_t i = s.index;
        g.visible[i] = 1;

        // Opacity: activated -> pre-sigmoid.
        g.opacities[i] = d_alpha[sp] * s.alpha * (1.0 - s.alpha);

        // inv_cov -> dilated 2D covariance. d_icov holds symmetric-parameter
        // gradients; expand to full-matrix entries first.
        const Sym2& a = s.inv_cov;
        double gxx = d_icov[3 * sp], gxy = 0.5 * d_icov[3 * sp + 1],
               gyy = d_icov[3 * sp + 2];
        // B = -A * G * A (2x2 symmetric chain for the matrix inverse).
        double agxx = a.xx * gxx + a.xy * gxy, agxy = a.xx * gxy + a.xy * gyy;
        double agyx = a.xy * gxx + a.yy * gxy, agyy = a.xy * gxy + a.yy * gyy;
        double bxx = -(agxx * a.xx + agxy * a.xy);
        double bxy = -(agxx * a.xy + agxy * a.yy);
        double byx = -(agyx * a.xx + agyy * a.xy);
        double byy = -(agyx * a.xy + agyy * a.yy);

        // Recompute the projection intermediates.
        Vec3 t = cam.to_view(cloud.position(i));
        double inv_z = 1.0 / t.z, inv_z2 = inv_z * inv_z;
        double j00 = cam.fx * inv_z, j02 = -cam.fx * t.x * inv_z2;
        double j11 = cam.fy * inv_z, j12 = -cam.fy * t.y * inv_z2;
        const Mat3& r = cam.view_rotation;
        double m0[3], m1[3];
        for (int c = 0; c < 3; ++c) {
            m0[c] = j00 * r(0, c) + j02 * r(2, c);
            m1[c] = j11 * r(1, c) + j12 * r(2, c);
        }
        Mat3 sigma3 = build_covariance(cloud.rotation(i), cloud.activated_scale(i));

        // d_sigma3 = M^T B M;  d_M = (B + B^T) M Sigma.
        Mat3 d_sigma3;
        for (int rr = 0; rr < 3; ++rr)
            for (int cc = 0; cc < 3; ++cc)
                d_sigma3(rr, cc) = m0[rr] * (bxx * m0[cc] + bxy * m1[cc]) +
                                   m1[rr] * (byx * m0[cc] + byy * m1[cc]);
        double sm0[3], sm1[3];
        for (int rr = 0; rr < 3; ++rr) {
            sm0[rr] = sigma3(rr, 0) * m0[0] + sigma3(rr, 1) * m0[1] + sigma3(rr, 2) * m0[2];
            sm1[rr] = sigma3(rr, 0) * m1[0] + sigma3(rr, 1) * m1[1] + sigma3(rr, 2) * m1[2];
        }
        double dm0[3], dm1[3];
        for (int c = 0; c < 3; ++c) {
            dm0[c] = (bxx + bxx) * sm0[c] + (bxy + byx) * sm1[c];
            dm1[c] = (byx + bxy) * sm0[c] + (byy + byy) * sm1[c];
        }
        // d_J from M = J R_view (only the four live J entries).
        double dj00 = dm0[0] * r(0, 0) + dm0[1] * r(0, 1) + dm0[2] * r(0, 2);
        double dj02 = dm0[0] * r(2, 0) + dm0[1] * r(2, 1) + dm0[2] * r(2, 2);
        double dj11 = dm1[0] * r(1, 0) + dm1[1] * r(1, 1) + dm1[2] * r(1, 2);
        double dj12 = dm1[0] * r(2, 0) + dm1[1] * r(2, 1) + dm1[2] * r(2, 2);

        // View-point gradient: covariance path through J(t)...
        Vec3 dt;
        dt.x = dj02 * (-cam.fx * inv_z2);
        dt.y = dj12 * (-cam.fy * inv_z2);
        dt.z = dj00 * (-cam.fx * inv_z2) + dj11 * (-cam.fy * inv_z2) +
               dj02 * (2.0 * cam.fx * t.x * inv_z2 * inv_z) +
               dj12 * (2.0 * cam.fy * t.y * inv_z2 * inv_z);
        // ...plus the mean path (the Jacobian itself).
        double dmx = d_mean[2 * sp], dmy = d_mean[2 * sp + 1];
        dt.x += j00 * dmx;
        dt.y += j11 * dmy;
        dt.z += j02 * dmx + j12 * dmy;

        Vec3 d_pos = cam.view_rotation.transposed() * dt;
        g.positions[3 * i] += d_pos.x;
        g.positions[3 * i + 1] += d_pos.y;
        g.positions[3 * i + 2] += d_pos.z;

        // 3D covariance -> (q, s). Sigma = N N^T with N = R S.
        Vec4 q = cloud.rotation(i);
        double qn = q.norm();
        Vec4 qhat = {q.w / qn, q.x / qn, q.y / qn, q.z / qn};
        Mat3 rot = quat_to_rotation(q);
        Vec3 s_act = cloud.activated_scale(i);
        double sv[3] = {s_act.x, s_act.y, s_act.z};
        double nmat[9], dn[9];
        for (int rr = 0; rr < 3; ++rr)
            for (int cc = 0; cc < 3; ++cc) nmat[rr * 3 + cc] = rot(rr, cc) * sv[cc];
        for (int rr = 0; rr < 3; ++rr)
            for (int cc = 0; cc < 3; ++cc) {
                double acc = 0.0;
                for (int kk = 0; kk < 3; ++kk)
                    acc += (d_sigma3(rr, kk) + d_sigma3(kk, rr)) * nmat[kk * 3 + cc];
                dn[rr * 3 + cc] = acc;
            }
        for (int cc = 0; cc < 3; ++cc) {
            double ds = rot(0, cc) * dn[cc] + rot(1, cc) * dn[3 + cc] + rot(2, cc) * dn[6 + cc];
            g.log_scales[3 * i + cc] = ds * sv[cc];
        }
        // d_R entries, then quaternion chain with normalization projection.
        double dq_hat[4] = {0, 0, 0, 0};
        for (int comp = 0; comp < 4; ++comp) {
            Mat3 dr = quat_rotation_derivative(qhat, comp);
            double acc = 0.0;
            for (int rr = 0; rr < 3; ++rr)
                for (int cc = 0; cc < 3; ++cc) acc += dn[rr * 3 + cc] * sv[cc] * dr(rr, cc);
            dq_hat[comp] = acc;
        }
        double qh[4] = {qhat.w, qhat.x, qhat.y, qhat.z};
        double proj = dq_hat[0] * qh[0] + dq_hat[1] * qh[1] + dq_hat[2] * qh[2] +
                      dq_hat[3] * qh[3];
        for (int comp = 0; comp < 4; ++comp)
            g.rotations[4 * i + comp] = (dq_hat[comp] - proj * qh[comp]) / qn;

        // Screen-space positional gradient in NDC units for density control.
        double gx = dmx * (aux.width * 0.5), gy = dmy * (aux.height * 0.5);
        g.mean2d_grad_ndc[i] = std::sqrt(gx * gx + gy * gy);
    });

    return g;
}

FeatureImage render_image(const GaussianCloud& cloud, const Camera& cam,
                          const std::vector<double>& background,
                          const RasterizeOptions& options, bool second_sh,
                          RenderAux* aux_out) {
    CompositeValues vals = composite_values(cloud, cam, second_sh);
    if (background.size() != static_cast<std::size_t>(vals.channels))
        throw std::invalid_argument("render_image: background channel mismatch");
    return rasterize_forward(cloud, cam, vals.values, background, options, aux_out);
}

}  // namespace gshider
