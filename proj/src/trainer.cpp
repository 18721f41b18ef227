#include "gshider/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gshider/steg_eval.hpp"

namespace gshider {

std::string to_string(TrainMode mode) {
    switch (mode) {
    case TrainMode::Hider: return "hider";
    case TrainMode::HiderImage: return "hider-image";
    case TrainMode::HiderMulti: return "hider-multi";
    case TrainMode::Baseline3dgs: return "baseline-3dgs";
    case TrainMode::BaselineSh: return "baseline-sh";
    case TrainMode::BaselineDecoder: return "baseline-decoder";
    }
    return "hider";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "hider") return TrainMode::Hider;
    if (s == "hider-image") return TrainMode::HiderImage;
    if (s == "hider-multi") return TrainMode::HiderMulti;
    if (s == "baseline-3dgs") return TrainMode::Baseline3dgs;
    if (s == "baseline-sh") return TrainMode::BaselineSh;
    if (s == "baseline-decoder") return TrainMode::BaselineDecoder;
    throw std::invalid_argument("unknown train mode: " + s);
}

void TrainConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be > 0");
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (beta < 0.0 || beta > 1.0 || gamma < 0.0 || gamma > 1.0)
        throw std::invalid_argument("TrainConfig: beta and gamma must be in [0, 1]");
    if (feature_dim < 1) throw std::invalid_argument("TrainConfig: feature_dim must be >= 1");
    if (hidden_count < 1) throw std::invalid_argument("TrainConfig: hidden_count must be >= 1");
    if (decoder_depth < 1 || decoder_width < 1)
        throw std::invalid_argument("TrainConfig: decoder topology invalid");
    if (background != "black" && background != "white")
        throw std::invalid_argument("TrainConfig: background must be black or white");
    if (densify_interval < 1)
        throw std::invalid_argument("TrainConfig: densify_interval must be >= 1");
}

void PairedDataset::validate() const {
    if (entries.empty()) throw std::invalid_argument("PairedDataset: no views");
    int streams = -1;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const DatasetEntry& e = entries[i];
        e.camera.validate();
        if (e.image.channels != 3 || e.image.height != e.camera.height ||
            e.image.width != e.camera.width)
            throw std::invalid_argument("PairedDataset: image/camera size mismatch at view " +
                                        std::to_string(i));
        for (const FeatureImage& m : e.hidden)
            if (!m.same_shape(e.image))
                throw std::invalid_argument("PairedDataset: hidden image shape mismatch at view " +
                                            std::to_string(i));
        if (!e.hidden.empty()) {
            if (streams < 0) streams = static_cast<int>(e.hidden.size());
            else if (streams != static_cast<int>(e.hidden.size()))
                throw std::invalid_argument("PairedDataset: inconsistent hidden stream count");
        }
    }
    if (designated_view >= static_cast<int>(entries.size()))
        throw std::invalid_argument("PairedDataset: designated view out of range");
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

namespace {
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;
}  // namespace

void AdamState::remap(const std::vector<std::int64_t>& source, std::size_t stride) {
    std::vector<double> nm(source.size() * stride, 0.0), nv(source.size() * stride, 0.0);
    for (std::size_t i = 0; i < source.size(); ++i) {
        if (source[i] < 0) continue;
        std::size_t src = static_cast<std::size_t>(source[i]) * stride;
        for (std::size_t k = 0; k < stride; ++k) {
            nm[i * stride + k] = m[src + k];
            nv[i * stride + k] = v[src + k];
        }
    }
    m = std::move(nm);
    v = std::move(nv);
}

void AdamState::update(float* params, const double* grads, std::size_t n, double lr) {
    if (m.size() != n) resize(n);
    ++step;
    double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
    for (std::size_t i = 0; i < n; ++i) {
        double g = grads[i];
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        params[i] = static_cast<float>(static_cast<double>(params[i]) -
                                       lr * mhat / (std::sqrt(vhat) + kAdamEps));
    }
}

// ---------------------------------------------------------------------------
// Adaptive density control
// ---------------------------------------------------------------------------

DensityControlResult adaptive_density_control(GaussianCloud& cloud,
                                              const DensityStats& stats,
                                              const TrainConfig& config, Rng& rng) {
    DensityControlResult result;
    std::size_t n = cloud.size();
    if (n == 0 || stats.size() != n) {
        result.source.resize(n);
        std::iota(result.source.begin(), result.source.end(), 0);
        return result;
    }

    double split_threshold = config.split_scale_fraction * cloud.scene_extent;
    std::vector<std::uint8_t> prune(n, 0), clone(n, 0), split(n, 0);
    std::size_t n_prune = 0, n_clone = 0, n_split = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (cloud.activated_opacity(i) < config.eps_prune) {
            prune[i] = 1;
            ++n_prune;
            continue;
        }
        double mean_grad =
            stats.seen[i] ? stats.grad_norm_sum[i] / stats.seen[i] : 0.0;
        if (mean_grad < config.tau_grad) continue;
        Vec3 s = cloud.activated_scale(i);
        double max_scale = std::max(s.x, std::max(s.y, s.z));
        if (max_scale > split_threshold) {
            split[i] = 1;
            ++n_split;
        } else {
            clone[i] = 1;
            ++n_clone;
        }
    }
    std::size_t projected = n - n_prune + n_clone + n_split;
    if (config.max_gaussians > 0 && projected > config.max_gaussians) {
        // Over budget: keep pruning, skip growth this round.
        std::fill(clone.begin(), clone.end(), 0);
        std::fill(split.begin(), split.end(), 0);
        n_clone = n_split = 0;
    }

    GaussianCloud out;
    out.mode = cloud.mode;
    out.feature_dim = cloud.feature_dim;
    out.scene_extent = cloud.scene_extent;
    std::size_t feat_stride = cloud.mode == CloudMode::Feature
                                  ? static_cast<std::size_t>(cloud.feature_dim)
                                  : static_cast<std::size_t>(kShCoeffCount);

    auto append_from = [&](std::size_t i, const Vec3& position, const float* log_scale3) {
        out.positions.push_back(static_cast<float>(position.x));
        out.positions.push_back(static_cast<float>(position.y));
        out.positions.push_back(static_cast<float>(position.z));
        for (int k = 0; k < 4; ++k) out.rotations.push_back(cloud.rotations[4 * i + k]);
        for (int k = 0; k < 3; ++k) out.log_scales.push_back(log_scale3[k]);
        out.opacities.push_back(cloud.opacities[i]);
        if (cloud.mode == CloudMode::Feature) {
            for (std::size_t k = 0; k < feat_stride; ++k)
                out.features.push_back(cloud.features[i * feat_stride + k]);
        } else {
            for (std::size_t k = 0; k < feat_stride; ++k)
                out.sh.push_back(cloud.sh[i * feat_stride + k]);
            if (cloud.mode == CloudMode::ShDouble)
                for (std::size_t k = 0; k < feat_stride; ++k)
                    out.sh2.push_back(cloud.sh2[i * feat_stride + k]);
        }
    };

    // Survivors keep their optimizer moments.
    for (std::size_t i = 0; i < n; ++i) {
        if (prune[i] || split[i]) continue;
        append_from(i, cloud.position(i), &cloud.log_scales[3 * i]);
        result.source.push_back(static_cast<std::int64_t>(i));
    }
    // Clones, shifted along the accumulated positional gradient (descent
    // direction), half a mean radius.
    for (std::size_t i = 0; i < n; ++i) {
        if (!clone[i]) continue;
        Vec3 pos = cloud.position(i);
        if (stats.seen[i]) {
            Vec3 g = {stats.world_grad_sum[3 * i] / stats.seen[i],
                      stats.world_grad_sum[3 * i + 1] / stats.seen[i],
                      stats.world_grad_sum[3 * i + 2] / stats.seen[i]};
            double gn = g.norm();
            if (gn > 1e-12) {
                Vec3 s = cloud.activated_scale(i);
                double step = 0.5 * (s.x + s.y + s.z) / 3.0;
                pos = pos - g * (step / gn);
            }
        }
        append_from(i, pos, &cloud.log_scales[3 * i]);
        result.source.push_back(-1);
    }
    // Splits: two children sampled inside the parent, scale / 1.6.
    constexpr double kSplitScaleShrink = 1.6;
    for (std::size_t i = 0; i < n; ++i) {
        if (!split[i]) continue;
        Vec3 s = cloud.activated_scale(i);
        Mat3 rot = quat_to_rotation(cloud.rotation(i));
        float child_log_scale[3] = {
            static_cast<float>(cloud.log_scales[3 * i] - std::log(kSplitScaleShrink)),
            static_cast<float>(cloud.log_scales[3 * i + 1] - std::log(kSplitScaleShrink)),
            static_cast<float>(cloud.log_scales[3 * i + 2] - std::log(kSplitScaleShrink))};
        for (int child = 0; child < 2; ++child) {
            Vec3 local = {rng.normal() * s.x, rng.normal() * s.y, rng.normal() * s.z};
            Vec3 pos = cloud.position(i) + rot * local;
            append_from(i, pos, child_log_scale);
            result.source.push_back(-1);
        }
    }

    result.pruned = n_prune;
    result.cloned = n_clone;
    result.split = n_split;
    cloud = std::move(out);
    cloud.validate();
    return result;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

// Scene box for random initialization when a dataset carries no seed
// points: camera look-at targets at the mean camera-to-centroid distance,
// padded by half of it.
std::pair<Vec3, Vec3> visible_box(const PairedDataset& dataset) {
    std::vector<Vec3> centers;
    for (const auto& e : dataset.entries) centers.push_back(e.camera.center());
    Vec3 centroid;
    for (const Vec3& c : centers) centroid = centroid + c;
    centroid = centroid * (1.0 / centers.size());
    double mean_dist = 0.0;
    for (const Vec3& c : centers) mean_dist += (c - centroid).norm();
    mean_dist /= centers.size();
    if (!(mean_dist > 0.0)) mean_dist = 1.0;
    Vec3 lo = centroid, hi = centroid;
    for (const auto& e : dataset.entries) {
        Mat3 rt = e.camera.view_rotation.transposed();
        Vec3 forward = rt * Vec3{0.0, 0.0, 1.0};
        Vec3 target = e.camera.center() + forward * mean_dist;
        lo.x = std::min(lo.x, target.x); hi.x = std::max(hi.x, target.x);
        lo.y = std::min(lo.y, target.y); hi.y = std::max(hi.y, target.y);
        lo.z = std::min(lo.z, target.z); hi.z = std::max(hi.z, target.z);
    }
    Vec3 pad = {0.5 * mean_dist, 0.5 * mean_dist, 0.5 * mean_dist};
    return {lo - pad, hi + pad};
}

double mean_or_nan(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
}

}  // namespace

Trainer::Trainer(const PairedDataset& dataset, const TrainConfig& config)
    : dataset_(dataset), config_(config), rng_(config.seed) {
    config_.validate();
    dataset_.validate();

    int streams = dataset_.hidden_streams();
    switch (config_.mode) {
    case TrainMode::Hider:
    case TrainMode::BaselineSh:
    case TrainMode::BaselineDecoder:
        if (streams < 1)
            throw std::invalid_argument("dataset has no hidden views for this mode");
        break;
    case TrainMode::HiderMulti:
        if (streams != config_.hidden_count)
            throw std::invalid_argument("dataset hidden streams != hidden_count");
        break;
    case TrainMode::HiderImage:
        if (dataset_.designated_view < 0 ||
            dataset_.designated_view >= static_cast<int>(dataset_.train_count()) ||
            dataset_.entries[dataset_.designated_view].hidden.empty())
            throw std::invalid_argument(
                "image mode needs a designated training view with a hidden target");
        break;
    case TrainMode::Baseline3dgs:
        break;
    }

    Rng cloud_rng = rng_.fork(1);
    Rng ds_rng = rng_.fork(2);
    Rng dm_rng = rng_.fork(3);
    CloudMode cmode = config_.uses_feature_cloud()
                          ? CloudMode::Feature
                          : (config_.mode == TrainMode::BaselineSh ? CloudMode::ShDouble
                                                                   : CloudMode::Sh);
    if (!dataset_.seeds.empty()) {
        cloud_ = init_cloud(dataset_.seeds, config_.feature_dim, cmode, cloud_rng.next_u64());
    } else {
        auto [lo, hi] = visible_box(dataset_);
        cloud_ = init_cloud_in_box(config_.init_random_points, lo, hi, config_.feature_dim,
                                   cmode, cloud_rng.next_u64());
    }

    if (config_.uses_decoders()) {
        std::vector<int> sc{config_.feature_dim};
        for (int i = 0; i < config_.decoder_depth - 1; ++i) sc.push_back(config_.decoder_width);
        sc.push_back(3);
        scene_decoder_ = make_conv_stack(sc, FinalAct::Sigmoid, ds_rng.next_u64());
        std::vector<int> mc{config_.feature_dim};
        for (int i = 0; i < config_.decoder_depth - 1; ++i) mc.push_back(config_.decoder_width);
        mc.push_back(3 * config_.message_streams());
        message_decoder_ = make_conv_stack(mc, FinalAct::Sigmoid, dm_rng.next_u64());
    } else if (config_.mode == TrainMode::BaselineDecoder) {
        std::vector<int> mc{3};
        for (int i = 0; i < config_.decoder_depth - 1; ++i) mc.push_back(config_.decoder_width);
        mc.push_back(3);
        message_decoder_ = make_conv_stack(mc, FinalAct::Sigmoid, dm_rng.next_u64());
    }

    auto init_stack_adam = [](const ConvStack& stack, std::vector<AdamState>& states) {
        states.assign(stack.layers.size() * 2, {});
        for (std::size_t l = 0; l < stack.layers.size(); ++l) {
            states[2 * l].resize(stack.layers[l].weights.size());
            states[2 * l + 1].resize(stack.layers[l].bias.size());
        }
    };
    if (!scene_decoder_.empty()) init_stack_adam(scene_decoder_, adam_scene_dec_);
    if (!message_decoder_.empty()) init_stack_adam(message_decoder_, adam_message_dec_);

    std::size_t n = cloud_.size();
    adam_positions_.resize(3 * n);
    adam_rotations_.resize(4 * n);
    adam_scales_.resize(3 * n);
    adam_opacities_.resize(n);
    if (cloud_.mode == CloudMode::Feature)
        adam_features_.resize(cloud_.features.size());
    else {
        adam_sh_.resize(cloud_.sh.size());
        if (cloud_.mode == CloudMode::ShDouble) adam_sh2_.resize(cloud_.sh2.size());
    }
    stats_.reset(n);
}

double Trainer::position_lr() const {
    double t = config_.iterations > 1
                   ? static_cast<double>(iteration_) / config_.iterations
                   : 1.0;
    return config_.lr_position * cloud_.scene_extent * std::pow(0.01, t);
}

void Trainer::update_stack(ConvStack& stack, std::vector<AdamState>& states,
                           const ConvStackGrads& grads) {
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        states[2 * l].update(stack.layers[l].weights.data(), grads.weights[l].data(),
                             grads.weights[l].size(), config_.lr_decoder);
        states[2 * l + 1].update(stack.layers[l].bias.data(), grads.bias[l].data(),
                                 grads.bias[l].size(), config_.lr_decoder);
    }
}

void Trainer::accumulate_stats(const RasterGrads& grads) {
    std::size_t n = cloud_.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!grads.visible[i]) continue;
        stats_.grad_norm_sum[i] += grads.mean2d_grad_ndc[i];
        stats_.world_grad_sum[3 * i] += grads.positions[3 * i];
        stats_.world_grad_sum[3 * i + 1] += grads.positions[3 * i + 1];
        stats_.world_grad_sum[3 * i + 2] += grads.positions[3 * i + 2];
        stats_.seen[i] += 1;
    }
}

void Trainer::apply_cloud_update(const RasterGrads& grads, const std::vector<double>& d_sh,
                                 const std::vector<double>& d_sh2,
                                 const std::vector<double>& d_feat) {
    std::size_t n = cloud_.size();
    adam_positions_.update(cloud_.positions.data(), grads.positions.data(), 3 * n,
                           position_lr());
    adam_rotations_.update(cloud_.rotations.data(), grads.rotations.data(), 4 * n,
                           config_.lr_rotation);
    adam_scales_.update(cloud_.log_scales.data(), grads.log_scales.data(), 3 * n,
                        config_.lr_scale);
    adam_opacities_.update(cloud_.opacities.data(), grads.opacities.data(), n,
                           config_.lr_opacity);
    if (!d_feat.empty())
        adam_features_.update(cloud_.features.data(), d_feat.data(), d_feat.size(),
                              config_.lr_feature);
    if (!d_sh.empty())
        adam_sh_.update(cloud_.sh.data(), d_sh.data(), d_sh.size(), config_.lr_feature);
    if (!d_sh2.empty())
        adam_sh2_.update(cloud_.sh2.data(), d_sh2.data(), d_sh2.size(), config_.lr_feature);
}

LossReport Trainer::step_feature_modes(std::size_t view_index) {
    const DatasetEntry& entry = dataset_.entries[view_index];
    RasterizeOptions opts = config_.raster_options();
    std::vector<double> bg(static_cast<std::size_t>(cloud_.feature_dim), 0.0);
    CompositeValues vals = composite_values(cloud_, entry.camera);
    RenderAux aux;
    FeatureImage feat = rasterize_forward(cloud_, entry.camera, vals.values, bg, opts, &aux);

    DecoderCache cache_s;
    FeatureImage i_pred = decoder_forward(scene_decoder_, feat, &cache_s, config_.threads);
    LossValue rgb = loss_weighted(i_pred, entry.image, config_.gamma);

    bool message_active =
        config_.mode != TrainMode::HiderImage ||
        static_cast<int>(view_index) == dataset_.designated_view;
    LossReport report;
    report.rgb = rgb.value;
    report.rgb_l1 = rgb.l1_component;
    report.rgb_ssim = rgb.ssim_component;

    DecoderCache cache_m;
    FeatureImage d_mes_up;  // lambda-scaled upstream for the message decoder
    if (message_active) {
        FeatureImage m_pred = decoder_forward(message_decoder_, feat, &cache_m, config_.threads);
        int streams = config_.message_streams();
        d_mes_up = FeatureImage(m_pred.height, m_pred.width, m_pred.channels);
        double mes_total = 0.0, mes_l1 = 0.0, mes_ssim = 0.0;
        for (int l = 0; l < streams; ++l) {
            FeatureImage slice(m_pred.height, m_pred.width, 3);
            for (int y = 0; y < m_pred.height; ++y)
                for (int x = 0; x < m_pred.width; ++x)
                    for (int c = 0; c < 3; ++c)
                        slice.at(y, x, c) = m_pred.at(y, x, 3 * l + c);
            LossValue lv = loss_weighted(slice, entry.hidden[static_cast<std::size_t>(l)],
                                         config_.beta);
            mes_total += lv.value / streams;
            mes_l1 += lv.l1_component / streams;
            mes_ssim += lv.ssim_component / streams;
            double scale = config_.lambda / streams;
            for (int y = 0; y < m_pred.height; ++y)
                for (int x = 0; x < m_pred.width; ++x)
                    for (int c = 0; c < 3; ++c)
                        d_mes_up.at(y, x, 3 * l + c) = scale * lv.grad.at(y, x, c);
        }
        report.mes = mes_total;
        report.mes_l1 = mes_l1;
        report.mes_ssim = mes_ssim;
    }
    report.total = loss_total(report.rgb, report.mes, config_.lambda);
    if (!std::isfinite(report.total)) {
        std::ostringstream oss;
        oss << "non-finite loss at iteration " << iteration_ << ", view " << view_index
            << " (rgb=" << report.rgb << ", mes=" << report.mes << ")";
        throw TrainAbort(oss.str());
    }

    ConvStackGrads grads_s = decoder_backward(scene_decoder_, cache_s, rgb.grad, config_.threads);
    FeatureImage d_feat_img = grads_s.input;
    bool step_message = message_active && config_.lambda > 0.0;
    ConvStackGrads grads_m;
    if (step_message) {
        grads_m = decoder_backward(message_decoder_, cache_m, d_mes_up, config_.threads);
        for (std::size_t i = 0; i < d_feat_img.data.size(); ++i)
            d_feat_img.data[i] += grads_m.input.data[i];
    }

    RasterGrads grads = rasterize_backward(cloud_, entry.camera, vals.values, bg, aux, d_feat_img);
    apply_cloud_update(grads, {}, {}, grads.values);
    update_stack(scene_decoder_, adam_scene_dec_, grads_s);
    if (step_message) update_stack(message_decoder_, adam_message_dec_, grads_m);
    accumulate_stats(grads);
    return report;
}

LossReport Trainer::step_sh_modes(std::size_t view_index) {
    const DatasetEntry& entry = dataset_.entries[view_index];
    RasterizeOptions opts = config_.raster_options();
    std::vector<double> bg = config_.rgb_background();

    CompositeValues vals = composite_values(cloud_, entry.camera);
    RenderAux aux;
    FeatureImage render = rasterize_forward(cloud_, entry.camera, vals.values, bg, opts, &aux);
    LossValue rgb = loss_weighted(render, entry.image, config_.gamma);

    LossReport report;
    report.rgb = rgb.value;
    report.rgb_l1 = rgb.l1_component;
    report.rgb_ssim = rgb.ssim_component;

    std::size_t n = cloud_.size();
    std::vector<double> d_sh(cloud_.sh.size(), 0.0), d_sh2;
    std::vector<double> d_positions_extra(3 * n, 0.0);
    FeatureImage d_render = rgb.grad;

    ConvStackGrads grads_m;
    bool step_message = false;
    if (config_.mode == TrainMode::BaselineDecoder) {
        DecoderCache cache_m;
        FeatureImage m_pred = decoder_forward(message_decoder_, render, &cache_m, config_.threads);
        LossValue mes = loss_weighted(m_pred, entry.hidden[0], config_.beta);
        report.mes = mes.value;
        report.mes_l1 = mes.l1_component;
        report.mes_ssim = mes.ssim_component;
        if (config_.lambda > 0.0) {
            FeatureImage up = mes.grad;
            for (double& v : up.data) v *= config_.lambda;
            grads_m = decoder_backward(message_decoder_, cache_m, up, config_.threads);
            for (std::size_t i = 0; i < d_render.data.size(); ++i)
                d_render.data[i] += grads_m.input.data[i];
            step_message = true;
        }
    }

    report.total = loss_total(report.rgb, report.mes, config_.lambda);

    RasterGrads grads = rasterize_backward(cloud_, entry.camera, vals.values, bg, aux, d_render);
    composite_values_backward(cloud_, entry.camera, vals, grads.values, false, d_sh.data(),
                              d_positions_extra.data());

    if (config_.mode == TrainMode::BaselineSh) {
        CompositeValues vals2 = composite_values(cloud_, entry.camera, true);
        RenderAux aux2;
        FeatureImage render2 =
            rasterize_forward(cloud_, entry.camera, vals2.values, bg, opts, &aux2);
        LossValue mes = loss_weighted(render2, entry.hidden[0], config_.beta);
        report.mes = mes.value;
        report.mes_l1 = mes.l1_component;
        report.mes_ssim = mes.ssim_component;
        report.total = loss_total(report.rgb, report.mes, config_.lambda);
        if (config_.lambda > 0.0) {
            FeatureImage up = mes.grad;
            for (double& v : up.data) v *= config_.lambda;
            RasterGrads grads2 =
                rasterize_backward(cloud_, entry.camera, vals2.values, bg, aux2, up);
            d_sh2.assign(cloud_.sh2.size(), 0.0);
            composite_values_backward(cloud_, entry.camera, vals2, grads2.values, true,
                                      d_sh2.data(), d_positions_extra.data());
            for (std::size_t i = 0; i < 3 * n; ++i) grads.positions[i] += grads2.positions[i];
            for (std::size_t i = 0; i < 4 * n; ++i) grads.rotations[i] += grads2.rotations[i];
            for (std::size_t i = 0; i < 3 * n; ++i) grads.log_scales[i] += grads2.log_scales[i];
            for (std::size_t i = 0; i < n; ++i) grads.opacities[i] += grads2.opacities[i];
            for (std::size_t i = 0; i < n; ++i) {
                if (!grads2.visible[i]) continue;
                grads.visible[i] = 1;
                grads.mean2d_grad_ndc[i] += grads2.mean2d_grad_ndc[i];
            }
        }
    }

    if (!std::isfinite(report.total)) {
        std::ostringstream oss;
        oss << "non-finite loss at iteration " << iteration_ << ", view " << view_index
            << " (rgb=" << report.rgb << ", mes=" << report.mes << ")";
        throw TrainAbort(oss.str());
    }

    for (std::size_t i = 0; i < 3 * n; ++i) grads.positions[i] += d_positions_extra[i];
    apply_cloud_update(grads, d_sh, d_sh2, {});
    if (step_message) update_stack(message_decoder_, adam_message_dec_, grads_m);
    accumulate_stats(grads);
    return report;
}

LossReport Trainer::train_step(std::size_t view_index) {
    if (view_index >= dataset_.size())
        throw std::invalid_argument("train_step: view index out of range");
    LossReport report = config_.uses_feature_cloud() ? step_feature_modes(view_index)
                                                     : step_sh_modes(view_index);
    ++iteration_;
    return report;
}

bool Trainer::maybe_density_control() {
    if (iteration_ < config_.densify_start || iteration_ > config_.effective_densify_end())
        return false;
    if (iteration_ % config_.densify_interval != 0) return false;
    Rng density_rng(config_.seed ^ (0xDEC0DEull + static_cast<std::uint64_t>(iteration_)));
    DensityControlResult r = adaptive_density_control(cloud_, stats_, config_, density_rng);
    adam_positions_.remap(r.source, 3);
    adam_rotations_.remap(r.source, 4);
    adam_scales_.remap(r.source, 3);
    adam_opacities_.remap(r.source, 1);
    if (cloud_.mode == CloudMode::Feature)
        adam_features_.remap(r.source, static_cast<std::size_t>(cloud_.feature_dim));
    else {
        adam_sh_.remap(r.source, kShCoeffCount);
        if (cloud_.mode == CloudMode::ShDouble) adam_sh2_.remap(r.source, kShCoeffCount);
    }
    stats_.reset(cloud_.size());
    return true;
}

MetricsRow Trainer::held_out_metrics() {
    MetricsRow row;
    row.iteration = iteration_;
    std::size_t begin = dataset_.train_count();
    std::size_t end = dataset_.size();
    if (begin == end) begin = 0;  // tiny datasets: report on the train views
    RasterizeOptions opts = config_.raster_options();
    std::vector<double> psnr_s, psnr_m;
    for (std::size_t v = begin; v < end; ++v) {
        const DatasetEntry& entry = dataset_.entries[v];
        if (config_.uses_feature_cloud()) {
            std::vector<double> bg(static_cast<std::size_t>(cloud_.feature_dim), 0.0);
            FeatureImage feat = render_image(cloud_, entry.camera, bg, opts);
            FeatureImage i_pred =
                decoder_forward(scene_decoder_, feat, nullptr, config_.threads);
            psnr_s.push_back(psnr(i_pred, entry.image));
            if (!entry.hidden.empty()) {
                FeatureImage m_pred =
                    decoder_forward(message_decoder_, feat, nullptr, config_.threads);
                int streams = std::min<int>(config_.message_streams(),
                                            static_cast<int>(entry.hidden.size()));
                for (int l = 0; l < streams; ++l) {
                    FeatureImage slice(m_pred.height, m_pred.width, 3);
                    for (int y = 0; y < m_pred.height; ++y)
                        for (int x = 0; x < m_pred.width; ++x)
                            for (int c = 0; c < 3; ++c)
                                slice.at(y, x, c) = m_pred.at(y, x, 3 * l + c);
                    psnr_m.push_back(psnr(slice, entry.hidden[static_cast<std::size_t>(l)]));
                }
            }
        } else {
            std::vector<double> bg = config_.rgb_background();
            FeatureImage render = render_image(cloud_, entry.camera, bg, opts);
            psnr_s.push_back(psnr(render, entry.image));
            if (!entry.hidden.empty()) {
                if (cloud_.mode == CloudMode::ShDouble) {
                    FeatureImage render2 = render_image(cloud_, entry.camera, bg, opts, true);
                    psnr_m.push_back(psnr(render2, entry.hidden[0]));
                } else if (!message_decoder_.empty()) {
                    FeatureImage m_pred =
                        decoder_forward(message_decoder_, render, nullptr, config_.threads);
                    psnr_m.push_back(psnr(m_pred, entry.hidden[0]));
                }
            }
        }
    }
    row.psnr_s = mean_or_nan(psnr_s);
    row.psnr_m = mean_or_nan(psnr_m);
    return row;
}

FitResult Trainer::run() {
    std::vector<std::size_t> order;
    Rng shuffle_rng(config_.seed ^ 0x51AFFE11ull);
    std::size_t cursor = 0;

    auto next_view = [&]() {
        if (cursor >= order.size()) {
            order.resize(dataset_.train_count());
            std::iota(order.begin(), order.end(), 0);
            shuffle_rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    };

    FitResult result;
    MetricsRow initial = held_out_metrics();
    result.history.push_back(initial);
    LossReport last;
    for (int it = 0; it < config_.iterations; ++it) {
        last = train_step(next_view());
        maybe_density_control();
        if (config_.eval_interval > 0 &&
            (iteration_ % config_.eval_interval == 0 || iteration_ == config_.iterations)) {
            MetricsRow row = held_out_metrics();
            row.loss_rgb = last.rgb;
            row.loss_mes = last.mes;
            if (result.history.empty() || result.history.back().iteration != row.iteration)
                result.history.push_back(row);
        }
    }
    result.cloud = cloud_;
    result.scene_decoder = scene_decoder_;
    result.message_decoder = message_decoder_;
    return result;
}

FitResult fit(const PairedDataset& dataset, const TrainConfig& config) {
    Trainer trainer(dataset, config);
    return trainer.run();
}

// ---------------------------------------------------------------------------
// RTWS
// ---------------------------------------------------------------------------

FeatureImage watermark_carrier(int height, int width) {
    FeatureImage carrier(height, width, 2);
    constexpr double kTau = 2.0 * 3.14159265358979323846;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            carrier.at(y, x, 0) = std::cos(kTau * (x + y) / kWatermarkCarrierPeriod);
            carrier.at(y, x, 1) = std::cos(kTau * (x - y) / kWatermarkCarrierPeriod);
        }
    return carrier;
}

namespace {

// Encoder input: cover (3) + watermark (3) + carrier (2).
FeatureImage stack_watermark_input(const FeatureImage& cover, const FeatureImage& w_cop,
                                   const FeatureImage& carrier) {
    FeatureImage stacked(cover.height, cover.width, 8);
    for (int y = 0; y < cover.height; ++y)
        for (int x = 0; x < cover.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                stacked.at(y, x, c) = cover.at(y, x, c);
                stacked.at(y, x, 3 + c) = w_cop.at(y, x, c);
            }
            stacked.at(y, x, 6) = carrier.at(y, x, 0);
            stacked.at(y, x, 7) = carrier.at(y, x, 1);
        }
    return stacked;
}

}  // namespace

FeatureImage apply_watermark(const ConvStack& encoder, const FeatureImage& cover,
                             const FeatureImage& w_cop, double residual_scale,
                             int threads) {
    if (!cover.same_shape(w_cop))
        throw std::invalid_argument("apply_watermark: shape mismatch");
    FeatureImage carrier = watermark_carrier(cover.height, cover.width);
    FeatureImage residual = decoder_forward(
        encoder, stack_watermark_input(cover, w_cop, carrier), nullptr, threads);
    FeatureImage out = cover;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] += residual_scale * residual.data[i];
    return out;
}

RtwsResult rtws_finetune(const GaussianCloud& cloud, const ConvStack& scene_decoder,
                         const PairedDataset& dataset, const FeatureImage& w_cop,
                         const RtwsConfig& config) {
    if (cloud.mode != CloudMode::Feature)
        throw std::invalid_argument("rtws_finetune: needs a feature-mode cloud");
    dataset.validate();

    RtwsResult result;
    result.cloud = cloud;
    Rng rng(config.seed);
    result.encoder = make_conv_stack({8, config.encoder_width, config.encoder_width, 3},
                                     FinalAct::Tanh, rng.next_u64());
    result.decoder = make_conv_stack({3, config.decoder_width, config.decoder_width,
                                      config.decoder_width, config.decoder_width, 3},
                                     FinalAct::Sigmoid, rng.next_u64());

    std::size_t train_views = dataset.train_count();
    FeatureImage carrier = watermark_carrier(w_cop.height, w_cop.width);
    auto stack_cover = [&](const FeatureImage& cover) {
        return stack_watermark_input(cover, w_cop, carrier);
    };

    std::vector<AdamState> enc_adam(result.encoder.layers.size() * 2);
    std::vector<AdamState> dec_adam(result.decoder.layers.size() * 2);
    auto update_pair = [&](ConvStack& stack, std::vector<AdamState>& states,
                           const ConvStackGrads& a, const ConvStackGrads* b, double lr) {
        for (std::size_t l = 0; l < stack.layers.size(); ++l) {
            std::vector<double> wg = a.weights[l];
            std::vector<double> bgr = a.bias[l];
            if (b) {
                for (std::size_t i = 0; i < wg.size(); ++i) wg[i] += b->weights[l][i];
                for (std::size_t i = 0; i < bgr.size(); ++i) bgr[i] += b->bias[l][i];
            }
            states[2 * l].update(stack.layers[l].weights.data(), wg.data(), wg.size(), lr);
            states[2 * l + 1].update(stack.layers[l].bias.data(), bgr.data(), bgr.size(), lr);
        }
    };

    FeatureImage black(w_cop.height, w_cop.width, 3);

    // Watermark-channel pretraining on ground-truth views: embed + extract,
    // and stay black on clean images. The residual amplitude anneals from a
    // strong start down to the deployment bound; without the curriculum the
    // decoder settles on the input-blind compromise output.
    for (int it = 0; it < config.pretrain_iterations; ++it) {
        double ramp = config.pretrain_iterations > 1
                          ? static_cast<double>(it) /
                                (0.6 * config.pretrain_iterations)
                          : 1.0;
        double amplitude =
            ramp >= 1.0 ? config.residual_scale
                        : 0.25 + (config.residual_scale - 0.25) * ramp;
        const DatasetEntry& entry =
            dataset.entries[rng.uniform_index(train_views)];
        FeatureImage stacked = stack_cover(entry.image);
        DecoderCache cache_e;
        FeatureImage residual =
            decoder_forward(result.encoder, stacked, &cache_e, config.threads);
        FeatureImage marked = entry.image;
        for (std::size_t i = 0; i < marked.data.size(); ++i)
            marked.data[i] += amplitude * residual.data[i];

        DecoderCache cache_p, cache_g;
        FeatureImage out_marked =
            decoder_forward(result.decoder, marked, &cache_p, config.threads);
        FeatureImage out_clean =
            decoder_forward(result.decoder, entry.image, &cache_g, config.threads);
        LossValue term_marked = loss_mse(out_marked, w_cop);
        LossValue term_clean = loss_mse(out_clean, black);

        ConvStackGrads dec_marked =
            decoder_backward(result.decoder, cache_p, term_marked.grad, config.threads);
        ConvStackGrads dec_clean =
            decoder_backward(result.decoder, cache_g, term_clean.grad, config.threads);
        FeatureImage d_residual = dec_marked.input;
        for (double& v : d_residual.data) v *= amplitude;
        ConvStackGrads enc_grads =
            decoder_backward(result.encoder, cache_e, d_residual, config.threads);
        update_pair(result.decoder, dec_adam, dec_marked, &dec_clean, config.lr);
        update_pair(result.encoder, enc_adam, enc_grads, nullptr, config.lr);
    }

    // Mixed targets: every other training view carries the watermark.
    std::vector<FeatureImage> targets(train_views);
    for (std::size_t v = 0; v < train_views; ++v) {
        const FeatureImage& cover = dataset.entries[v].image;
        targets[v] = (v % 2 == 0) ? apply_watermark(result.encoder, cover, w_cop,
                                                    config.residual_scale, config.threads)
                                  : cover;
    }

    // Feature-only fine-tune toward the mixed targets; geometry and the
    // scene decoder stay frozen.
    RasterizeOptions opts;
    opts.threads = config.threads;
    std::vector<double> bg(static_cast<std::size_t>(result.cloud.feature_dim), 0.0);
    AdamState feat_adam;
    feat_adam.resize(result.cloud.features.size());
    for (int it = 0; it < config.finetune_iterations; ++it) {
        std::size_t v = rng.uniform_index(train_views);
        const DatasetEntry& entry = dataset.entries[v];
        CompositeValues vals = composite_values(result.cloud, entry.camera);
        RenderAux aux;
        FeatureImage feat =
            rasterize_forward(result.cloud, entry.camera, vals.values, bg, opts, &aux);
        DecoderCache cache_s;
        FeatureImage i_pred = decoder_forward(scene_decoder, feat, &cache_s, config.threads);
        LossValue lv = loss_weighted(i_pred, targets[v], config.gamma);
        if (!std::isfinite(lv.value))
            throw TrainAbort("non-finite loss in RTWS fine-tune at iteration " +
                             std::to_string(it));
        ConvStackGrads grads_s =
            decoder_backward(scene_decoder, cache_s, lv.grad, config.threads);
        RasterGrads grads = rasterize_backward(result.cloud, entry.camera, vals.values, bg,
                                               aux, grads_s.input);
        feat_adam.update(result.cloud.features.data(), grads.values.data(),
                         grads.values.size(), config.lr);
    }

    // Copyright-decoder adaptation against the (now fixed) renders.
    std::vector<FeatureImage> renders(train_views);
    for (std::size_t v = 0; v < train_views; ++v) {
        const DatasetEntry& entry = dataset.entries[v];
        FeatureImage feat = render_image(result.cloud, entry.camera, bg, opts);
        renders[v] = decoder_forward(scene_decoder, feat, nullptr, config.threads);
    }
    for (int it = 0; it < config.decoder_iterations; ++it) {
        std::size_t v = rng.uniform_index(train_views);
        CopLoss cop = loss_cop(result.decoder, renders[v], dataset.entries[v].image, w_cop,
                               config.threads);
        update_pair(result.decoder, dec_adam, cop.pred_grads, &cop.gt_grads, config.lr);
    }
    return result;
}

}  // namespace gshider
