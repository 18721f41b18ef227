#include "gshider/steg_eval.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "gshider/rng.hpp"

namespace gshider {

double psnr(const FeatureImage& a, const FeatureImage& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    double mse = acc / static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

GaussianCloud select_cloud(const GaussianCloud& cloud, const std::vector<std::uint8_t>& keep) {
    GaussianCloud out;
    out.mode = cloud.mode;
    out.feature_dim = cloud.feature_dim;
    out.scene_extent = cloud.scene_extent;
    std::size_t n = cloud.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        for (int k = 0; k < 3; ++k) out.positions.push_back(cloud.positions[3 * i + k]);
        for (int k = 0; k < 4; ++k) out.rotations.push_back(cloud.rotations[4 * i + k]);
        for (int k = 0; k < 3; ++k) out.log_scales.push_back(cloud.log_scales[3 * i + k]);
        out.opacities.push_back(cloud.opacities[i]);
        if (cloud.mode == CloudMode::Feature) {
            std::size_t m = static_cast<std::size_t>(cloud.feature_dim);
            for (std::size_t k = 0; k < m; ++k)
                out.features.push_back(cloud.features[i * m + k]);
        } else {
            for (int k = 0; k < kShCoeffCount; ++k)
                out.sh.push_back(cloud.sh[i * kShCoeffCount + k]);
            if (cloud.mode == CloudMode::ShDouble)
                for (int k = 0; k < kShCoeffCount; ++k)
                    out.sh2.push_back(cloud.sh2[i * kShCoeffCount + k]);
        }
    }
    return out;
}

std::size_t prune_count(std::size_t n, double ratio) {
    if (ratio < 0.0 || ratio >= 1.0)
        throw std::invalid_argument("prune ratio must be in [0, 1)");
    return static_cast<std::size_t>(ratio * static_cast<double>(n));
}

}  // namespace

GaussianCloud prune_sequential(const GaussianCloud& cloud, double ratio) {
    std::size_t n = cloud.size();
    std::size_t remove = prune_count(n, ratio);
    std::vector<std::uint8_t> keep(n, 1);
    if (remove > 0) {
        std::vector<std::uint32_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            double oa = cloud.activated_opacity(a), ob = cloud.activated_opacity(b);
            if (oa != ob) return oa < ob;
            return a < b;
        });
        for (std::size_t k = 0; k < remove; ++k) keep[order[k]] = 0;
    }
    return select_cloud(cloud, keep);
}

GaussianCloud prune_random(const GaussianCloud& cloud, double ratio, std::uint64_t seed) {
    std::size_t n = cloud.size();
    std::size_t remove = prune_count(n, ratio);
    std::vector<std::uint8_t> keep(n, 1);
    if (remove > 0) {
        Rng rng(seed);
        std::vector<std::uint32_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        // Partial Fisher-Yates: the first `remove` slots pick the victims.
        for (std::size_t i = 0; i < remove; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
            std::swap(order[i], order[j]);
            keep[order[i]] = 0;
        }
    }
    return select_cloud(cloud, keep);
}

namespace {

FeatureImage slice_stream(const FeatureImage& multi, int l) {
    FeatureImage out(multi.height, multi.width, 3);
    for (int y = 0; y < multi.height; ++y)
        for (int x = 0; x < multi.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = multi.at(y, x, 3 * l + c);
    return out;
}

}  // namespace

MetricsReport evaluate(const GaussianCloud& cloud, const ConvStack* scene_decoder,
                       const ConvStack* message_decoder, const PairedDataset& dataset,
                       bool held_out_only, int threads) {
    dataset.validate();
    MetricsReport report;
    std::size_t begin = held_out_only ? dataset.train_count() : 0;
    if (begin >= dataset.size()) begin = 0;
    RasterizeOptions opts;
    opts.threads = threads;
    double sum_s = 0.0, sum_ss = 0.0, sum_m = 0.0, sum_sm = 0.0, sum_t = 0.0;
    std::size_t count_m = 0;

    for (std::size_t v = begin; v < dataset.size(); ++v) {
        const DatasetEntry& entry = dataset.entries[v];
        ViewMetrics vm;
        vm.view = static_cast<int>(v);
        auto t0 = std::chrono::steady_clock::now();

        FeatureImage i_pred;
        FeatureImage m_pred;
        bool have_message = false;
        if (cloud.mode == CloudMode::Feature) {
            if (!scene_decoder)
                throw std::invalid_argument("evaluate: feature cloud needs a scene decoder");
            std::vector<double> bg(static_cast<std::size_t>(cloud.feature_dim), 0.0);
            FeatureImage feat = render_image(cloud, entry.camera, bg, opts);
            i_pred = decoder_forward(*scene_decoder, feat, nullptr, threads);
            if (message_decoder && !entry.hidden.empty()) {
                m_pred = decoder_forward(*message_decoder, feat, nullptr, threads);
                have_message = true;
            }
        } else {
            std::vector<double> bg{0.0, 0.0, 0.0};
            i_pred = render_image(cloud, entry.camera, bg, opts);
            if (!entry.hidden.empty()) {
                if (cloud.mode == CloudMode::ShDouble) {
                    m_pred = render_image(cloud, entry.camera, bg, opts, true);
                    have_message = true;
                } else if (message_decoder) {
                    m_pred = decoder_forward(*message_decoder, i_pred, nullptr, threads);
                    have_message = true;
                }
            }
        }
        auto t1 = std::chrono::steady_clock::now();
        vm.seconds = std::chrono::duration<double>(t1 - t0).count();

        vm.psnr_s = psnr(i_pred, entry.image);
        vm.ssim_s = ssim(i_pred, entry.image);
        if (have_message) {
            int streams = m_pred.channels / 3;
            streams = std::min<int>(streams, static_cast<int>(entry.hidden.size()));
            double pm = 0.0, sm = 0.0;
            for (int l = 0; l < streams; ++l) {
                FeatureImage s = streams == 1 && m_pred.channels == 3
                                     ? m_pred
                                     : slice_stream(m_pred, l);
                pm += psnr(s, entry.hidden[static_cast<std::size_t>(l)]) / streams;
                sm += ssim(s, entry.hidden[static_cast<std::size_t>(l)]) / streams;
            }
            vm.psnr_m = pm;
            vm.ssim_m = sm;
            sum_m += pm;
            sum_sm += sm;
            ++count_m;
        } else {
            vm.psnr_m = std::numeric_limits<double>::quiet_NaN();
            vm.ssim_m = std::numeric_limits<double>::quiet_NaN();
        }
        sum_s += vm.psnr_s;
        sum_ss += vm.ssim_s;
        sum_t += vm.seconds;
        report.per_view.push_back(vm);
    }
    std::size_t n = report.per_view.size();
    if (n > 0) {
        report.mean_psnr_s = sum_s / n;
        report.mean_ssim_s = sum_ss / n;
        report.mean_seconds = sum_t / n;
    }
    if (count_m > 0) {
        report.mean_psnr_m = sum_m / count_m;
        report.mean_ssim_m = sum_sm / count_m;
    } else {
        report.mean_psnr_m = std::numeric_limits<double>::quiet_NaN();
        report.mean_ssim_m = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

std::pair<double, double> wrong_decoder_test(const GaussianCloud& cloud,
                                             const ConvStack& message_decoder,
                                             const PairedDataset& dataset,
                                             std::uint64_t seed, bool held_out_only,
                                             int threads) {
    std::vector<int> channels;
    channels.push_back(message_decoder.input_channels());
    for (std::size_t l = 0; l + 1 < message_decoder.layers.size(); ++l)
        channels.push_back(message_decoder.layers[l].out_channels);
    channels.push_back(message_decoder.output_channels());
    ConvStack random_decoder = make_conv_stack(channels, message_decoder.final_act, seed);

    auto decode_mean_psnr = [&](const ConvStack& dec) {
        std::size_t begin = held_out_only ? dataset.train_count() : 0;
        if (begin >= dataset.size()) begin = 0;
        RasterizeOptions opts;
        opts.threads = threads;
        std::vector<double> bg(static_cast<std::size_t>(cloud.feature_dim), 0.0);
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t v = begin; v < dataset.size(); ++v) {
            const DatasetEntry& entry = dataset.entries[v];
            if (entry.hidden.empty()) continue;
            FeatureImage feat = render_image(cloud, entry.camera, bg, opts);
            FeatureImage m_pred = decoder_forward(dec, feat, nullptr, threads);
            int streams = std::min<int>(m_pred.channels / 3,
                                        static_cast<int>(entry.hidden.size()));
            for (int l = 0; l < streams; ++l) {
                FeatureImage s = m_pred.channels == 3 ? m_pred : slice_stream(m_pred, l);
                acc += psnr(s, entry.hidden[static_cast<std::size_t>(l)]) / streams;
            }
            ++count;
        }
        return count ? acc / count : std::numeric_limits<double>::quiet_NaN();
    };
    return {decode_mean_psnr(message_decoder), decode_mean_psnr(random_decoder)};
}

// ---------------------------------------------------------------------------
// Steganalysis detectors
// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> quantize8(const FeatureImage& rgb) {
    std::vector<std::uint8_t> out(rgb.data.size());
    for (std::size_t i = 0; i < rgb.data.size(); ++i) {
        double v = std::floor(rgb.data[i] * 255.0 + 0.5);
        out[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return out;
}

// Regularized lower incomplete gamma P(a, x), series + continued fraction.
double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) return 0.0;
    if (x == 0.0) return 0.0;
    double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-14) break;
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    // Continued fraction for Q(a, x), then P = 1 - Q.
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-14) break;
    }
    double q = std::exp(-x + a * std::log(x) - gln) * h;
    return 1.0 - q;
}

}  // namespace

double chi_square_lsb_score(const FeatureImage& rgb) {
    std::vector<std::uint8_t> q = quantize8(rgb);
    std::array<std::uint64_t, 256> hist{};
    for (std::uint8_t v : q) ++hist[v];
    double chi = 0.0;
    int used = 0;
    for (int k = 0; k < 128; ++k) {
        double even = static_cast<double>(hist[2 * k]);
        double odd = static_cast<double>(hist[2 * k + 1]);
        double expect = 0.5 * (even + odd);
        if (expect <= 0.0) continue;
        double d = even - expect;
        chi += d * d / expect;
        ++used;
    }
    int df = std::max(1, used - 1);
    // Embedding equalizes LSB pairs: small chi-square means high risk.
    return 1.0 - gamma_p(0.5 * df, 0.5 * chi);
}

double sample_pairs_score(const FeatureImage& rgb) {
    std::vector<std::uint8_t> q = quantize8(rgb);
    int h = rgb.height, w = rgb.width, ch = rgb.channels;
    double total = 0.0;
    for (int c = 0; c < ch; ++c) {
        std::uint64_t cw = 0, cz = 0, cx = 0, cy = 0, cp = 0;
        auto classify = [&](std::uint8_t u, std::uint8_t v) {
            ++cp;
            if ((u >> 1) == (v >> 1) && u != v) ++cw;
            if (u == v) ++cz;
            bool v_even = (v & 1) == 0;
            if ((v_even && u < v) || (!v_even && u > v)) ++cx;
            if ((v_even && u > v) || (!v_even && u < v)) ++cy;
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x + 1 < w; ++x)
                classify(q[(static_cast<std::size_t>(y) * w + x) * ch + c],
                         q[(static_cast<std::size_t>(y) * w + x + 1) * ch + c]);
        for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x < w; ++x)
                classify(q[(static_cast<std::size_t>(y) * w + x) * ch + c],
                         q[((static_cast<std::size_t>(y) + 1) * w + x) * ch + c]);
        if (cp == 0) continue;
        double a = 0.5 * (static_cast<double>(cw) + static_cast<double>(cz));
        double b = 2.0 * static_cast<double>(cx) - static_cast<double>(cp);
        double cc = static_cast<double>(cy) - static_cast<double>(cx);
        double rate = 0.0;
        if (a != 0.0) {
            double disc = b * b - 4.0 * a * cc;
            if (disc >= 0.0) {
                double root_pos = (-b + std::sqrt(disc)) / (2.0 * a);
                double root_neg = (-b - std::sqrt(disc)) / (2.0 * a);
                rate = std::abs(root_pos) <= std::abs(root_neg) ? root_pos : root_neg;
            } else if (b != 0.0) {
                rate = cc / b;
            }
        } else if (b != 0.0) {
            rate = cc / b;
        }
        if (!std::isfinite(rate)) rate = 0.0;
        total += std::clamp(rate, 0.0, 1.0);
    }
    return ch > 0 ? total / ch : 0.0;
}

double detector_score(const FeatureImage& rgb) {
    return 0.5 * (chi_square_lsb_score(rgb) + sample_pairs_score(rgb));
}

DetectionReport roc_curve(const std::vector<double>& positive_scores,
                          const std::vector<double>& negative_scores) {
    if (positive_scores.empty() || negative_scores.empty())
        throw std::invalid_argument("roc_curve: both score sets must be non-empty");
    DetectionReport report;
    report.positive_scores = positive_scores;
    report.negative_scores = negative_scores;

    std::vector<double> thresholds = positive_scores;
    thresholds.insert(thresholds.end(), negative_scores.begin(), negative_scores.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    std::int64_t np = static_cast<std::int64_t>(positive_scores.size());
    std::int64_t nn = static_cast<std::int64_t>(negative_scores.size());
    report.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::int64_t prev_tp = 0, prev_fp = 0;
    std::int64_t area2 = 0;  // 2 * area in count units
    for (double t : thresholds) {
        std::int64_t tp = 0, fp = 0;
        for (double s : positive_scores) tp += s >= t;
        for (double s : negative_scores) fp += s >= t;
        area2 += (fp - prev_fp) * (tp + prev_tp);
        report.roc.push_back({t, static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
        prev_tp = tp;
        prev_fp = fp;
    }
    // Classification at "score >= -inf" already reaches (1,1) at the lowest
    // threshold; no extra endpoint needed beyond it.
    report.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(np) *
                                               static_cast<double>(nn));
    return report;
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "view,psnr_s,ssim_s,psnr_m,ssim_m,seconds\n";
    char line[256];
    for (const ViewMetrics& vm : report.per_view) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", vm.view,
                      vm.psnr_s, vm.ssim_s, vm.psnr_m, vm.ssim_m, vm.seconds);
        out << line;
    }
}

void write_roc_csv(const DetectionReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "threshold,fpr,tpr\n";
    char line[128];
    for (const RocPoint& p : report.roc) {
        std::snprintf(line, sizeof(line), "%.9g,%.9f,%.9f\n", p.threshold, p.fpr, p.tpr);
        out << line;
    }
}

}  // namespace gshider
