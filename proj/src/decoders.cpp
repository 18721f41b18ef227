#include "gshider/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gshider/rng.hpp"
#include "gshider/thread_pool.hpp"

namespace gshider {

namespace {

// Fixed parallel granularity; merges over bands keep reductions
// thread-count independent.
constexpr int kRowBands = 16;

}  // namespace

void ConvStack::validate() const {
    for (std::size_t l = 0; l + 1 < layers.size(); ++l)
        if (layers[l].out_channels != layers[l + 1].in_channels)
            throw std::invalid_argument("ConvStack: adjacent layer channels mismatch");
    for (const ConvLayer& layer : layers) {
        if (layer.in_channels < 1 || layer.out_channels < 1)
            throw std::invalid_argument("ConvStack: empty layer");
        if (layer.weights.size() != layer.weight_count() ||
            layer.bias.size() != static_cast<std::size_t>(layer.out_channels))
            throw std::invalid_argument("ConvStack: weight array shape mismatch");
    }
}

ConvStack make_conv_stack(const std::vector<int>& channels, FinalAct final_act,
                          std::uint64_t seed) {
    if (channels.size() < 2)
        throw std::invalid_argument("make_conv_stack: need at least one layer");
    ConvStack stack;
    stack.final_act = final_act;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < channels.size(); ++l) {
        ConvLayer layer;
        layer.in_channels = channels[l];
        layer.out_channels = channels[l + 1];
        layer.weights.resize(layer.weight_count());
        layer.bias.assign(static_cast<std::size_t>(layer.out_channels), 0.0f);
        double std_dev = std::sqrt(2.0 / (9.0 * channels[l]));  // fan-in
        for (float& w : layer.weights) w = static_cast<float>(rng.normal(0.0, std_dev));
        stack.layers.push_back(std::move(layer));
    }
    stack.validate();
    return stack;
}

namespace {

struct Band {
    int y0, y1;
};

Band band_rows(int height, int band) {
    int per = (height + kRowBands - 1) / kRowBands;
    int y0 = band * per;
    int y1 = std::min(height, y0 + per);
    if (y0 >= y1) return {0, 0};
    return {y0, y1};
}

// One conv layer, rows [y0, y1): out = conv(in) + bias, optional activation.
// `weights64` is the layer's weight array widened to double.
void conv_rows(const ConvLayer& layer, const std::vector<double>& weights64,
               const FeatureImage& in, FeatureImage& out, int y0, int y1, bool relu,
               FinalAct final_act) {
    int h = in.height, w = in.width;
    int ci = layer.in_channels, co = layer.out_channels;
    std::vector<double> acc(static_cast<std::size_t>(co));
    for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int oc = 0; oc < co; ++oc) acc[oc] = layer.bias[oc];
            for (int ky = 0; ky < 3; ++ky) {
                int yy = y + ky - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    int xx = x + kx - 1;
                    if (xx < 0 || xx >= w) continue;
                    const double* src = in.pixel(yy, xx);
                    const double* wbase =
                        weights64.data() + (static_cast<std::size_t>(ky) * 3 + kx) * ci * co;
                    for (int ic = 0; ic < ci; ++ic) {
                        double v = src[ic];
                        const double* wrow = wbase + static_cast<std::size_t>(ic) * co;
                        for (int oc = 0; oc < co; ++oc) acc[oc] += v * wrow[oc];
                    }
                }
            }
            double* dst = out.pixel(y, x);
            if (relu) {
                for (int oc = 0; oc < co; ++oc) dst[oc] = acc[oc] > 0.0 ? acc[oc] : 0.0;
            } else {
                switch (final_act) {
                case FinalAct::None:
                    for (int oc = 0; oc < co; ++oc) dst[oc] = acc[oc];
                    break;
                case FinalAct::Sigmoid:
                    for (int oc = 0; oc < co; ++oc) dst[oc] = sigmoid(acc[oc]);
                    break;
                case FinalAct::Tanh:
                    for (int oc = 0; oc < co; ++oc) dst[oc] = std::tanh(acc[oc]);
                    break;
                }
            }
        }
    }
}

}  // namespace

FeatureImage decoder_forward(const ConvStack& stack, const FeatureImage& input,
                             DecoderCache* cache, int threads) {
    stack.validate();
    if (stack.empty()) throw std::invalid_argument("decoder_forward: empty stack");
    if (input.channels != stack.input_channels())
        throw std::invalid_argument("decoder_forward: input channel mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->valid = false;
    }
    FeatureImage current = input;
    std::vector<double> weights64;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const ConvLayer& layer = stack.layers[l];
        bool last = l + 1 == stack.layers.size();
        weights64.assign(layer.weights.begin(), layer.weights.end());
        FeatureImage next(input.height, input.width, layer.out_channels);
        parallel_chunks(kRowBands, threads, [&](std::size_t band) {
            Band b = band_rows(input.height, static_cast<int>(band));
            conv_rows(layer, weights64, current, next, b.y0, b.y1, !last, stack.final_act);
        });
        if (cache) cache->inputs.push_back(std::move(current));
        current = std::move(next);
    }
    if (cache) {
        cache->output = current;
        cache->valid = true;
    }
    return current;
}

ConvStackGrads decoder_backward(const ConvStack& stack, const DecoderCache& cache,
                                const FeatureImage& d_output, int threads) {
    stack.validate();
    if (!cache.valid || cache.inputs.size() != stack.layers.size())
        throw std::invalid_argument("decoder_backward: missing or mismatched cache");
    if (!d_output.same_shape(cache.output))
        throw std::invalid_argument("decoder_backward: upstream gradient shape mismatch");

    int h = d_output.height, w = d_output.width;
    ConvStackGrads grads;
    grads.weights.resize(stack.layers.size());
    grads.bias.resize(stack.layers.size());

    FeatureImage d_out = d_output;  // gradient w.r.t. current layer's activations
    for (std::size_t li = stack.layers.size(); li-- > 0;) {
        const ConvLayer& layer = stack.layers[li];
        const FeatureImage& in = cache.inputs[li];
        bool last = li + 1 == stack.layers.size();
        int ci = layer.in_channels, co = layer.out_channels;

        // Activation chain: d_pre from d_out.
        FeatureImage d_pre(h, w, co);
        if (last) {
            switch (stack.final_act) {
            case FinalAct::None:
                d_pre = d_out;
                break;
            case FinalAct::Sigmoid:
                for (std::size_t i = 0; i < d_pre.data.size(); ++i) {
                    double s = cache.output.data[i];
                    d_pre.data[i] = d_out.data[i] * s * (1.0 - s);
                }
                break;
            case FinalAct::Tanh:
                for (std::size_t i = 0; i < d_pre.data.size(); ++i) {
                    double t = cache.output.data[i];
                    d_pre.data[i] = d_out.data[i] * (1.0 - t * t);
                }
                break;
            }
        } else {
            // ReLU mask from the next layer's cached input (its activations).
            const FeatureImage& act = cache.inputs[li + 1];
            for (std::size_t i = 0; i < d_pre.data.size(); ++i)
                d_pre.data[i] = act.data[i] > 0.0 ? d_out.data[i] : 0.0;
        }

        // Weight and bias gradients, band-partialed then merged in order.
        std::size_t wcount = layer.weight_count();
        std::vector<std::vector<double>> wpart(kRowBands);
        std::vector<std::vector<double>> bpart(kRowBands);
        parallel_chunks(kRowBands, threads, [&](std::size_t band) {
            Band b = band_rows(h, static_cast<int>(band));
            if (b.y0 == b.y1) return;
            std::vector<double>& wp = wpart[band];
            std::vector<double>& bp = bpart[band];
            wp.assign(wcount, 0.0);
            bp.assign(static_cast<std::size_t>(co), 0.0);
            for (int y = b.y0; y < b.y1; ++y) {
                for (int x = 0; x < w; ++x) {
                    const double* dp = d_pre.pixel(y, x);
                    for (int oc = 0; oc < co; ++oc) bp[oc] += dp[oc];
                    for (int ky = 0; ky < 3; ++ky) {
                        int yy = y + ky - 1;
                        if (yy < 0 || yy >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int xx = x + kx - 1;
                            if (xx < 0 || xx >= w) continue;
                            const double* src = in.pixel(yy, xx);
                            double* wbase =
                                wp.data() + (static_cast<std::size_t>(ky) * 3 + kx) * ci * co;
                            for (int ic = 0; ic < ci; ++ic) {
                                double v = src[ic];
                                double* wrow = wbase + static_cast<std::size_t>(ic) * co;
                                for (int oc = 0; oc < co; ++oc) wrow[oc] += v * dp[oc];
                            }
                        }
                    }
                }
            }
        });
        grads.weights[li].assign(wcount, 0.0);
        grads.bias[li].assign(static_cast<std::size_t>(co), 0.0);
        for (int band = 0; band < kRowBands; ++band) {
            if (wpart[band].empty()) continue;
            for (std::size_t i = 0; i < wcount; ++i) grads.weights[li][i] += wpart[band][i];
            for (int oc = 0; oc < co; ++oc) grads.bias[li][oc] += bpart[band][oc];
        }

        // Input gradient by gather: d_in(y,x,ic) sums W[ky][kx][ic][oc] *
        // d_pre(y - ky + 1, x - kx + 1, oc). Disjoint row writes.
        std::vector<double> weights64(layer.weights.begin(), layer.weights.end());
        FeatureImage d_in(h, w, ci);
        parallel_chunks(kRowBands, threads, [&](std::size_t band) {
            Band b = band_rows(h, static_cast<int>(band));
            std::vector<double> acc(static_cast<std::size_t>(ci));
            for (int y = b.y0; y < b.y1; ++y) {
                for (int x = 0; x < w; ++x) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (int ky = 0; ky < 3; ++ky) {
                        int yy = y - (ky - 1);
                        if (yy < 0 || yy >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int xx = x - (kx - 1);
                            if (xx < 0 || xx >= w) continue;
                            const double* dp = d_pre.pixel(yy, xx);
                            const double* wbase =
                                weights64.data() +
                                (static_cast<std::size_t>(ky) * 3 + kx) * ci * co;
                            for (int ic = 0; ic < ci; ++ic) {
                                const double* wrow =
                                    wbase + static_cast<std::size_t>(ic) * co;
                                double a = 0.0;
                                for (int oc = 0; oc < co; ++oc) a += wrow[oc] * dp[oc];
                                acc[ic] += a;
                            }
                        }
                    }
                    double* dst = d_in.pixel(y, x);
                    for (int ic = 0; ic < ci; ++ic) dst[ic] = acc[ic];
                }
            }
        });
        d_out = std::move(d_in);
    }
    grads.input = std::move(d_out);
    return grads;
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace {

constexpr int kWindow = 11;
constexpr int kHalfWindow = kWindow / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

struct SsimKernel {
    double taps[kWindow];
    SsimKernel() {
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            double d = i - kHalfWindow;
            taps[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += taps[i];
        }
        for (double& t : taps) t /= sum;
    }
};

const SsimKernel& ssim_kernel() {
    static SsimKernel k;
    return k;
}

// Separable windowed mean of one channel with renormalized border windows.
// `field` selects a * a, a * b or plain a via lambdas at the call site.
void filter_1d_rows(const std::vector<double>& in, std::vector<double>& out, int h,
                    int w) {
    const SsimKernel& k = ssim_kernel();
    for (int y = 0; y < h; ++y) {
        const double* row = in.data() + static_cast<std::size_t>(y) * w;
        double* orow = out.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            double acc = 0.0, wsum = 0.0;
            int i0 = std::max(0, x - kHalfWindow), i1 = std::min(w - 1, x + kHalfWindow);
            for (int i = i0; i <= i1; ++i) {
                double t = k.taps[i - x + kHalfWindow];
                acc += t * row[i];
                wsum += t;
            }
            orow[x] = acc / wsum;
        }
    }
}

void filter_1d_cols(const std::vector<double>& in, std::vector<double>& out, int h,
                    int w) {
    const SsimKernel& k = ssim_kernel();
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            double acc = 0.0, wsum = 0.0;
            int i0 = std::max(0, y - kHalfWindow), i1 = std::min(h - 1, y + kHalfWindow);
            for (int i = i0; i <= i1; ++i) {
                double t = k.taps[i - y + kHalfWindow];
                acc += t * in[static_cast<std::size_t>(i) * w + x];
                wsum += t;
            }
            out[static_cast<std::size_t>(y) * w + x] = acc / wsum;
        }
    }
}

void window_mean(const std::vector<double>& in, std::vector<double>& out,
                 std::vector<double>& tmp, int h, int w) {
    filter_1d_rows(in, tmp, h, w);
    filter_1d_cols(tmp, out, h, w);
}

// Adjoint of window_mean: out'(q) = sum_p k(p,q) g(p) with the same
// per-position renormalization. The 1D adjoint swaps the roles of the
// normalized positions.
void filter_1d_rows_adj(const std::vector<double>& g, std::vector<double>& out, int h,
                        int w) {
    const SsimKernel& k = ssim_kernel();
    for (int y = 0; y < h; ++y) {
        const double* row = g.data() + static_cast<std::size_t>(y) * w;
        double* orow = out.data() + static_cast<std::size_t>(y) * w;
        std::fill(orow, orow + w, 0.0);
        for (int x = 0; x < w; ++x) {
            double wsum = 0.0;
            int i0 = std::max(0, x - kHalfWindow), i1 = std::min(w - 1, x + kHalfWindow);
            for (int i = i0; i <= i1; ++i) wsum += k.taps[i - x + kHalfWindow];
            double v = row[x] / wsum;
            for (int i = i0; i <= i1; ++i) orow[i] += k.taps[i - x + kHalfWindow] * v;
        }
    }
}

void filter_1d_cols_adj(const std::vector<double>& g, std::vector<double>& out, int h,
                        int w) {
    const SsimKernel& k = ssim_kernel();
    std::fill(out.begin(), out.end(), 0.0);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            double wsum = 0.0;
            int i0 = std::max(0, y - kHalfWindow), i1 = std::min(h - 1, y + kHalfWindow);
            for (int i = i0; i <= i1; ++i) wsum += k.taps[i - y + kHalfWindow];
            double v = g[static_cast<std::size_t>(y) * w + x] / wsum;
            for (int i = i0; i <= i1; ++i)
                out[static_cast<std::size_t>(i) * w + x] += k.taps[i - y + kHalfWindow] * v;
        }
    }
}

void window_mean_adj(const std::vector<double>& g, std::vector<double>& out,
                     std::vector<double>& tmp, int h, int w) {
    filter_1d_cols_adj(g, tmp, h, w);
    filter_1d_rows_adj(tmp, out, h, w);
}

}  // namespace

double ssim(const FeatureImage& a, const FeatureImage& b, FeatureImage* grad_a) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    int h = a.height, w = a.width, ch = a.channels;
    std::size_t npix = static_cast<std::size_t>(h) * w;
    std::vector<double> ca(npix), cb(npix), aa(npix), bb(npix), ab(npix);
    std::vector<double> mu_a(npix), mu_b(npix), e_aa(npix), e_bb(npix), e_ab(npix);
    std::vector<double> tmp(npix);
    std::vector<double> g1, g2, g3, adj;
    if (grad_a) {
        *grad_a = FeatureImage(h, w, ch);
        g1.resize(npix);
        g2.resize(npix);
        g3.resize(npix);
        adj.resize(npix);
    }
    double total = 0.0;
    double inv_count = 1.0 / (static_cast<double>(npix) * ch);
    for (int c = 0; c < ch; ++c) {
        for (std::size_t p = 0; p < npix; ++p) {
            double va = a.data[p * ch + c], vb = b.data[p * ch + c];
            ca[p] = va;
            cb[p] = vb;
            aa[p] = va * va;
            bb[p] = vb * vb;
            ab[p] = va * vb;
        }
        window_mean(ca, mu_a, tmp, h, w);
        window_mean(cb, mu_b, tmp, h, w);
        window_mean(aa, e_aa, tmp, h, w);
        window_mean(bb, e_bb, tmp, h, w);
        window_mean(ab, e_ab, tmp, h, w);
        for (std::size_t p = 0; p < npix; ++p) {
            double ma = mu_a[p], mb = mu_b[p];
            double va = e_aa[p] - ma * ma;
            double vb = e_bb[p] - mb * mb;
            double cov = e_ab[p] - ma * mb;
            double n1 = 2.0 * ma * mb + kC1;
            double n2 = 2.0 * cov + kC2;
            double d1 = ma * ma + mb * mb + kC1;
            double d2 = va + vb + kC2;
            double s = (n1 * n2) / (d1 * d2);
            total += s;
            if (grad_a) {
                // Partials w.r.t. the windowed statistics of a.
                double inv_dd = 1.0 / (d1 * d2);
                double ds_dmu = (2.0 * mb * n2 + n1 * (-2.0 * mb)) * inv_dd -
                                s * (2.0 * ma / d1 - 2.0 * ma / d2);
                double ds_deaa = -s / d2;
                double ds_deab = 2.0 * n1 * inv_dd;
                g1[p] = ds_dmu * inv_count;
                g2[p] = ds_deaa * inv_count;
                g3[p] = ds_deab * inv_count;
            }
        }
        if (grad_a) {
            window_mean_adj(g1, ca, tmp, h, w);  // reuse ca as scratch output
            window_mean_adj(g2, adj, tmp, h, w);
            for (std::size_t p = 0; p < npix; ++p)
                ca[p] += 2.0 * a.data[p * ch + c] * adj[p];
            window_mean_adj(g3, adj, tmp, h, w);
            for (std::size_t p = 0; p < npix; ++p) {
                ca[p] += b.data[p * ch + c] * adj[p];
                grad_a->data[p * ch + c] = ca[p];
            }
        }
    }
    return total * inv_count;
}

LossValue loss_l1(const FeatureImage& pred, const FeatureImage& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("loss_l1: shape mismatch");
    LossValue out;
    out.grad = FeatureImage(pred.height, pred.width, pred.channels);
    double inv = 1.0 / static_cast<double>(pred.data.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - gt.data[i];
        acc += std::abs(d);
        out.grad.data[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    out.value = acc * inv;
    out.l1_component = out.value;
    return out;
}

LossValue loss_weighted(const FeatureImage& pred, const FeatureImage& gt, double w) {
    if (w < 0.0 || w > 1.0)
        throw std::invalid_argument("loss_weighted: weight must be in [0, 1]");
    LossValue l1 = loss_l1(pred, gt);
    if (w == 0.0) return l1;
    FeatureImage ssim_grad;
    double s = ssim(pred, gt, &ssim_grad);
    LossValue out;
    out.l1_component = l1.value;
    out.ssim_component = 1.0 - s;
    out.value = (1.0 - w) * l1.value + w * (1.0 - s);
    out.grad = FeatureImage(pred.height, pred.width, pred.channels);
    for (std::size_t i = 0; i < out.grad.data.size(); ++i)
        out.grad.data[i] = (1.0 - w) * l1.grad.data[i] - w * ssim_grad.data[i];
    return out;
}

LossValue loss_mse(const FeatureImage& pred, const FeatureImage& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("loss_mse: shape mismatch");
    LossValue out;
    out.grad = FeatureImage(pred.height, pred.width, pred.channels);
    double inv = 1.0 / static_cast<double>(pred.data.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - gt.data[i];
        acc += d * d;
        out.grad.data[i] = 2.0 * d * inv;
    }
    out.value = acc * inv;
    return out;
}

CopLoss loss_cop(const ConvStack& d_w, const FeatureImage& pred, const FeatureImage& gt,
                 const FeatureImage& w_cop, int threads) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("loss_cop: shape mismatch");
    DecoderCache cache_pred, cache_gt;
    FeatureImage out_pred = decoder_forward(d_w, pred, &cache_pred, threads);
    FeatureImage out_gt = decoder_forward(d_w, gt, &cache_gt, threads);
    if (!out_pred.same_shape(w_cop))
        throw std::invalid_argument("loss_cop: watermark shape mismatch");
    FeatureImage black(out_gt.height, out_gt.width, out_gt.channels);
    LossValue term_pred = loss_mse(out_pred, w_cop);
    LossValue term_gt = loss_mse(out_gt, black);
    CopLoss out;
    out.value = term_pred.value + term_gt.value;
    out.pred_grads = decoder_backward(d_w, cache_pred, term_pred.grad, threads);
    out.gt_grads = decoder_backward(d_w, cache_gt, term_gt.grad, threads);
    return out;
}

}  // namespace gshider
