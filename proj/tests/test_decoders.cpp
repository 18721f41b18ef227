#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gshider/decoders.hpp"
#include "gshider/rng.hpp"
#include "support/fd_checks.hpp"

using namespace gshider;
namespace ts = gshider::testsupport;

namespace {

FeatureImage random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0,
                          double hi = 1.0) {
    Rng rng(seed);
    FeatureImage img(h, w, c);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

}  // namespace

TEST_CASE("zero weights and biases decode to sigmoid(0) everywhere") {
    ConvStack stack = make_conv_stack({4, 8, 3}, FinalAct::Sigmoid, 1);
    for (ConvLayer& l : stack.layers) {
        std::fill(l.weights.begin(), l.weights.end(), 0.0f);
        std::fill(l.bias.begin(), l.bias.end(), 0.0f);
    }
    FeatureImage in = random_image(6, 7, 4, 2);
    FeatureImage out = decoder_forward(stack, in);
    for (double v : out.data) CHECK(v == 0.5);
}

TEST_CASE("default scene decoder maps 16 channels to 3") {
    ConvStack stack = make_conv_stack({16, 64, 64, 64, 64, 3}, FinalAct::Sigmoid, 3);
    CHECK(stack.layers.size() == 5);
    FeatureImage in = random_image(8, 8, 16, 4, -1.0, 1.0);
    FeatureImage out = decoder_forward(stack, in);
    CHECK(out.channels == 3);
    CHECK(out.height == 8);
    CHECK(out.width == 8);
    for (double v : out.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("ablation depths 3, 5 and 7 are all constructible") {
    for (int depth : {3, 5, 7}) {
        std::vector<int> channels{16};
        for (int i = 0; i < depth - 1; ++i) channels.push_back(32);
        channels.push_back(3);
        ConvStack stack = make_conv_stack(channels, FinalAct::Sigmoid, 5);
        CHECK(static_cast<int>(stack.layers.size()) == depth);
        FeatureImage out = decoder_forward(stack, random_image(6, 6, 16, 6));
        CHECK(out.channels == 3);
    }
}

TEST_CASE("two-stream message head emits six channels") {
    ConvStack stack = make_conv_stack({16, 32, 32, 32, 32, 6}, FinalAct::Sigmoid, 7);
    FeatureImage out = decoder_forward(stack, random_image(5, 9, 16, 8));
    CHECK(out.channels == 6);
}

TEST_CASE("channel mismatch is rejected") {
    ConvStack stack = make_conv_stack({4, 8, 3}, FinalAct::Sigmoid, 9);
    CHECK_THROWS_AS(decoder_forward(stack, random_image(4, 4, 5, 1)),
                    std::invalid_argument);
}

TEST_CASE("missing cache is rejected by the backward pass") {
    ConvStack stack = make_conv_stack({4, 8, 3}, FinalAct::Sigmoid, 9);
    DecoderCache cache;
    CHECK_THROWS_AS(decoder_backward(stack, cache, FeatureImage(4, 4, 3)),
                    std::invalid_argument);
}

TEST_CASE("bias-free ReLU stacks are positively homogeneous before the sigmoid") {
    ConvStack stack = make_conv_stack({4, 16, 16, 2}, FinalAct::None, 11);
    for (ConvLayer& l : stack.layers) std::fill(l.bias.begin(), l.bias.end(), 0.0f);
    FeatureImage in = random_image(6, 6, 4, 12, -1.0, 1.0);
    FeatureImage base = decoder_forward(stack, in);
    const double c = 3.5;
    FeatureImage scaled_in = in;
    for (double& v : scaled_in.data) v *= c;
    FeatureImage scaled_out = decoder_forward(stack, scaled_in);
    for (std::size_t i = 0; i < base.data.size(); ++i)
        CHECK(scaled_out.data[i] == doctest::Approx(c * base.data[i]).epsilon(1e-10));
}

TEST_CASE("zero upstream gradient produces zero weight gradients") {
    ConvStack stack = make_conv_stack({3, 8, 3}, FinalAct::Sigmoid, 13);
    FeatureImage in = random_image(5, 5, 3, 14);
    DecoderCache cache;
    decoder_forward(stack, in, &cache);
    ConvStackGrads grads = decoder_backward(stack, cache, FeatureImage(5, 5, 3));
    for (const auto& layer : grads.weights)
        for (double g : layer) CHECK(g == 0.0);
    for (double g : grads.input.data) CHECK(g == 0.0);
}

TEST_CASE("a center-only kernel behaves as a per-pixel linear map") {
    // One layer whose 3x3 kernel is zero except the center: the weight
    // gradient is the input/upstream outer product summed over pixels.
    ConvStack stack = make_conv_stack({2, 2, 2}, FinalAct::None, 15);
    // Make the *first* layer identity so the cached input of layer 2 equals
    // the raw input (ReLU after layer 1 must keep values positive).
    for (ConvLayer& l : stack.layers) {
        std::fill(l.weights.begin(), l.weights.end(), 0.0f);
        std::fill(l.bias.begin(), l.bias.end(), 0.0f);
    }
    stack.layers[0].w(1, 1, 0, 0) = 1.0f;
    stack.layers[0].w(1, 1, 1, 1) = 1.0f;
    stack.layers[1].w(1, 1, 0, 0) = 0.5f;
    stack.layers[1].w(1, 1, 1, 0) = -0.25f;
    stack.layers[1].w(1, 1, 0, 1) = 1.5f;
    stack.layers[1].w(1, 1, 1, 1) = 2.0f;
    FeatureImage in = random_image(4, 4, 2, 16, 0.1, 1.0);  // positive: ReLU inert
    DecoderCache cache;
    decoder_forward(stack, in, &cache);
    FeatureImage up = random_image(4, 4, 2, 17, -1.0, 1.0);
    ConvStackGrads grads = decoder_backward(stack, cache, up);
    for (int ic = 0; ic < 2; ++ic)
        for (int oc = 0; oc < 2; ++oc) {
            double expect = 0.0;
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) expect += in.at(y, x, ic) * up.at(y, x, oc);
            std::size_t idx = ((1 * 3 + 1) * 2 + ic) * 2 + oc;  // [ky=1][kx=1][ic][oc]
            CHECK(grads.weights[1][idx] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("decoder gradients match finite differences") {
    ConvStack stack = make_conv_stack({4, 6, 6, 3}, FinalAct::Sigmoid, 19);
    FeatureImage in = random_image(8, 8, 4, 20, -1.0, 1.0);
    ts::FdReport report = ts::decoder_fd_check(stack, in, 21);
    CHECK(report.checked > 100);
    CHECK(report.max_rel <= 1e-3);
}

TEST_CASE("decoder forward is pure and deterministic") {
    ConvStack stack = make_conv_stack({8, 16, 3}, FinalAct::Sigmoid, 23);
    FeatureImage in = random_image(9, 7, 8, 24);
    FeatureImage a = decoder_forward(stack, in);
    FeatureImage b = decoder_forward(stack, in);
    CHECK(a.data == b.data);
}

TEST_CASE("decoder output is bit-identical across thread counts") {
    ConvStack stack = make_conv_stack({8, 16, 16, 3}, FinalAct::Sigmoid, 25);
    FeatureImage in = random_image(33, 17, 8, 26, -1.0, 1.0);
    DecoderCache c1, c8;
    FeatureImage o1 = decoder_forward(stack, in, &c1, 1);
    FeatureImage o8 = decoder_forward(stack, in, &c8, 8);
    CHECK(o1.data == o8.data);
    FeatureImage up = random_image(33, 17, 3, 27, -1.0, 1.0);
    ConvStackGrads g1 = decoder_backward(stack, c1, up, 1);
    ConvStackGrads g8 = decoder_backward(stack, c8, up, 8);
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        CHECK(g1.weights[l] == g8.weights[l]);
        CHECK(g1.bias[l] == g8.bias[l]);
    }
    CHECK(g1.input.data == g8.input.data);
}

// ---------------------------------------------------------------------------
// SSIM and losses
// ---------------------------------------------------------------------------

TEST_CASE("SSIM of an image with itself is exactly one") {
    FeatureImage a = random_image(24, 24, 3, 30);
    CHECK(ssim(a, a) == 1.0);
}

TEST_CASE("SSIM of constant images matches the zero-variance closed form") {
    double xv = 0.7, yv = 0.4;
    FeatureImage a(16, 16, 3), b(16, 16, 3);
    for (double& v : a.data) v = xv;
    for (double& v : b.data) v = yv;
    double c1 = 0.01 * 0.01;
    double expect = (2.0 * xv * yv + c1) / (xv * xv + yv * yv + c1);
    CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("SSIM is symmetric in value") {
    FeatureImage a = random_image(20, 20, 3, 31);
    FeatureImage b = random_image(20, 20, 3, 32);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("SSIM rejects shape mismatches") {
    CHECK_THROWS_AS(ssim(FeatureImage(4, 4, 3), FeatureImage(4, 5, 3)),
                    std::invalid_argument);
}

TEST_CASE("SSIM gradient matches finite differences") {
    FeatureImage a = random_image(16, 16, 3, 33);
    FeatureImage b = random_image(16, 16, 3, 34);
    ts::FdReport report = ts::ssim_fd_check(a, b);
    CHECK(report.checked > 30);
    CHECK(report.max_rel <= 1e-3);
}

TEST_CASE("identical images have zero loss for any weight") {
    FeatureImage a = random_image(12, 12, 3, 35);
    for (double w : {0.0, 0.2, 1.0}) {
        LossValue lv = loss_weighted(a, a, w);
        CHECK(lv.value == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("weight zero reduces to the mean absolute error") {
    FeatureImage a = random_image(10, 10, 3, 36);
    FeatureImage b = random_image(10, 10, 3, 37);
    LossValue lv = loss_weighted(a, b, 0.0);
    double expect = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        expect += std::abs(a.data[i] - b.data[i]);
    expect /= static_cast<double>(a.data.size());
    CHECK(lv.value == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("l1 loss value is symmetric") {
    FeatureImage a = random_image(8, 8, 3, 38);
    FeatureImage b = random_image(8, 8, 3, 39);
    CHECK(loss_l1(a, b).value == doctest::Approx(loss_l1(b, a).value).epsilon(1e-14));
}

TEST_CASE("weighted loss gradient matches finite differences") {
    FeatureImage a = random_image(14, 14, 3, 40);
    FeatureImage b = random_image(14, 14, 3, 41);
    ts::FdReport report = ts::loss_weighted_fd_check(a, b, 0.2);
    CHECK(report.checked > 30);
    CHECK(report.max_rel <= 1e-3);
}

TEST_CASE("total loss combines the streams linearly") {
    CHECK(loss_total(1.0, 2.0, 0.5) == 2.0);
    CHECK(loss_total(1.25, 99.0, 0.0) == 1.25);
    CHECK_THROWS_AS(loss_total(1.0, 1.0, -0.1), std::invalid_argument);
}

TEST_CASE("copyright loss is zero in the trivial cases") {
    // A sigmoidless zero decoder emits exactly zero; with a zero watermark
    // both terms vanish.
    ConvStack d_w = make_conv_stack({3, 4, 3}, FinalAct::None, 42);
    for (ConvLayer& l : d_w.layers) {
        std::fill(l.weights.begin(), l.weights.end(), 0.0f);
        std::fill(l.bias.begin(), l.bias.end(), 0.0f);
    }
    FeatureImage pred = random_image(8, 8, 3, 43);
    FeatureImage gt = random_image(8, 8, 3, 44);
    FeatureImage zero(8, 8, 3);
    CopLoss cop = loss_cop(d_w, pred, gt, zero);
    CHECK(cop.value == 0.0);
}

TEST_CASE("copyright loss gradients match finite differences") {
    ConvStack d_w = make_conv_stack({3, 6, 3}, FinalAct::Sigmoid, 45);
    FeatureImage pred = random_image(8, 8, 3, 46);
    FeatureImage gt = random_image(8, 8, 3, 47);
    FeatureImage w_cop = random_image(8, 8, 3, 48);
    ts::FdReport report = ts::loss_cop_fd_check(d_w, pred, gt, w_cop);
    CHECK(report.checked > 50);
    CHECK(report.max_rel <= 1e-3);
}
