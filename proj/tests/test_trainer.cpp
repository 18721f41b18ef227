#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gshider/steg_eval.hpp"
#include "gshider/trainer.hpp"
#include "support/toy.hpp"

using namespace gshider;
namespace ts = gshider::testsupport;

namespace {

// Small fast configurations for unit-level fits.
TrainConfig tiny_config(TrainMode mode) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.iterations = 40;
    cfg.feature_dim = 8;
    cfg.decoder_width = 8;
    cfg.decoder_depth = 3;
    cfg.densify_start = 10;
    cfg.densify_interval = 20;
    cfg.eval_interval = 0;
    cfg.seed = 5;
    return cfg;
}

PairedDataset tiny_dataset(int views = 4, int size = 16, int hidden_streams = 1) {
    ts::ToyDatasetSpec spec;
    spec.views = views;
    spec.size = size;
    spec.hidden_streams = hidden_streams;
    spec.seeds_per_gaussian = 2;
    return ts::make_toy_dataset(spec);
}

}  // namespace

TEST_CASE("config validation rejects bad values") {
    TrainConfig cfg;
    cfg.iterations = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.beta = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.background = "pink";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("mode round-trips through strings") {
    for (TrainMode m : {TrainMode::Hider, TrainMode::HiderImage, TrainMode::HiderMulti,
                        TrainMode::Baseline3dgs, TrainMode::BaselineSh,
                        TrainMode::BaselineDecoder})
        CHECK(train_mode_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(train_mode_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("lambda zero leaves the message decoder untouched") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.lambda = 0.0;
    Trainer trainer(ds, cfg);
    std::vector<float> before = trainer.message_decoder().layers[0].weights;
    trainer.train_step(0);
    trainer.train_step(1);
    CHECK(trainer.message_decoder().layers[0].weights == before);
    // The scene decoder does move.
    CHECK_FALSE(trainer.scene_decoder().layers[0].weights ==
                Trainer(ds, cfg).scene_decoder().layers[0].weights);
}

TEST_CASE("one training step decreases the loss on a one-Gaussian micro fit") {
    // Single seed point, single 8x8 view.
    ts::ToyDatasetSpec spec;
    spec.views = 1;
    spec.size = 8;
    spec.hidden_streams = 1;
    spec.seeds_per_gaussian = 1;
    PairedDataset ds = ts::make_toy_dataset(spec);
    ds.seeds.resize(1);

    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.feature_dim = 4;
    cfg.decoder_width = 6;
    cfg.lr_feature = 2.5e-4;  // small steps for a guaranteed descent
    cfg.lr_decoder = 1e-4;
    cfg.lr_opacity = 5e-3;
    cfg.lr_scale = 5e-4;
    cfg.lr_rotation = 1e-4;
    cfg.lr_position = 1.6e-5;
    cfg.densify_start = 1000;  // off
    Trainer trainer(ds, cfg);
    CHECK(trainer.cloud().size() == 1);
    LossReport first = trainer.train_step(0);
    LossReport second = trainer.train_step(0);
    CHECK(second.total < first.total);
    CHECK(first.total == doctest::Approx(first.rgb + cfg.lambda * first.mes));
}

TEST_CASE("baseline-3dgs trains color only, no decoders") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Baseline3dgs);
    Trainer trainer(ds, cfg);
    CHECK(trainer.scene_decoder().empty());
    CHECK(trainer.message_decoder().empty());
    CHECK(trainer.cloud().mode == CloudMode::Sh);
    LossReport r1 = trainer.train_step(0);
    CHECK(r1.mes == 0.0);
    CHECK(r1.total == r1.rgb);
    for (int i = 0; i < 20; ++i) trainer.train_step(i % ds.train_count());
    LossReport r2 = trainer.train_step(0);
    CHECK(r2.rgb < r1.rgb);
}

TEST_CASE("baseline-sh shares geometry between the two SH sets") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::BaselineSh);
    Trainer trainer(ds, cfg);
    CHECK(trainer.cloud().mode == CloudMode::ShDouble);
    CHECK(trainer.cloud().sh2.size() == trainer.cloud().sh.size());
    LossReport r = trainer.train_step(0);
    CHECK(r.mes > 0.0);
    CHECK(r.total == doctest::Approx(r.rgb + cfg.lambda * r.mes));
}

TEST_CASE("baseline-decoder decodes the message from the rendered RGB") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::BaselineDecoder);
    Trainer trainer(ds, cfg);
    CHECK(trainer.cloud().mode == CloudMode::Sh);
    CHECK(trainer.message_decoder().input_channels() == 3);
    LossReport r = trainer.train_step(0);
    CHECK(r.mes > 0.0);
}

TEST_CASE("hider-multi wires an L x 3 message head") {
    PairedDataset ds = tiny_dataset(4, 16, 2);
    TrainConfig cfg = tiny_config(TrainMode::HiderMulti);
    cfg.hidden_count = 2;
    Trainer trainer(ds, cfg);
    CHECK(trainer.message_decoder().output_channels() == 6);
    LossReport r = trainer.train_step(0);
    CHECK(r.mes > 0.0);
}

TEST_CASE("image mode: message gradients exist only at the designated view") {
    ts::ToyDatasetSpec spec;
    spec.views = 4;
    spec.size = 16;
    spec.designated_view = 1;
    PairedDataset ds = ts::make_toy_dataset(spec);
    TrainConfig cfg = tiny_config(TrainMode::HiderImage);
    cfg.lambda = 0.1;
    Trainer trainer(ds, cfg);

    std::vector<float> before = trainer.message_decoder().layers[0].weights;
    LossReport off = trainer.train_step(0);  // not the designated view
    CHECK(off.mes == 0.0);
    CHECK(trainer.message_decoder().layers[0].weights == before);

    LossReport on = trainer.train_step(1);  // designated view
    CHECK(on.mes > 0.0);
    CHECK_FALSE(trainer.message_decoder().layers[0].weights == before);
}

TEST_CASE("density control: quiet statistics leave the cloud unchanged") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    Trainer trainer(ds, cfg);
    GaussianCloud cloud = trainer.cloud();
    DensityStats stats;
    stats.reset(cloud.size());  // all-zero gradients, below any threshold
    Rng rng(1);
    GaussianCloud copy = cloud;
    DensityControlResult r = adaptive_density_control(copy, stats, cfg, rng);
    CHECK(r.pruned == 0);
    CHECK(r.cloned == 0);
    CHECK(r.split == 0);
    CHECK(copy.positions == cloud.positions);
    CHECK(copy.features == cloud.features);
}

TEST_CASE("density control prunes zero-opacity Gaussians") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    Trainer trainer(ds, cfg);
    GaussianCloud cloud = trainer.cloud();
    std::size_t n = cloud.size();
    cloud.opacities[2] = -20.0f;  // activated ~ 2e-9 < eps_prune
    DensityStats stats;
    stats.reset(n);
    Rng rng(1);
    DensityControlResult r = adaptive_density_control(cloud, stats, cfg, rng);
    CHECK(r.pruned == 1);
    CHECK(cloud.size() == n - 1);
}

TEST_CASE("density control bookkeeping: n - pruned + cloned + split = new count") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.tau_grad = 1e-5;
    Trainer trainer(ds, cfg);
    GaussianCloud cloud = trainer.cloud();
    std::size_t n = cloud.size();
    Rng noise(77);
    DensityStats stats;
    stats.reset(n);
    for (std::size_t i = 0; i < n; ++i) {
        stats.seen[i] = 1;
        stats.grad_norm_sum[i] = noise.uniform(0.0, 3e-5);
        for (int k = 0; k < 3; ++k)
            stats.world_grad_sum[3 * i + k] = noise.normal(0.0, 1e-4);
    }
    // A few low opacities to force pruning.
    cloud.opacities[0] = -30.0f;
    cloud.opacities[1] = -30.0f;
    Rng rng(3);
    DensityControlResult r = adaptive_density_control(cloud, stats, cfg, rng);
    CHECK(n - r.pruned + r.cloned + r.split == cloud.size());
    CHECK(r.source.size() == cloud.size());
    cloud.validate();
    // All new parameters finite and within the scene-model invariants.
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Vec3 s = cloud.activated_scale(i);
        CHECK(std::isfinite(s.x));
        CHECK(s.x > 0.0);
        double a = cloud.activated_opacity(i);
        CHECK(a > 0.0);
        CHECK(a < 1.0);
    }
}

TEST_CASE("split shrinks child scales by 1.6") {
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.tau_grad = 1e-9;
    GaussianCloud cloud;
    cloud.mode = CloudMode::Feature;
    cloud.feature_dim = 2;
    cloud.scene_extent = 1.0;
    cloud.positions = {0, 0, 0};
    cloud.rotations = {1, 0, 0, 0};
    float big = static_cast<float>(std::log(0.5));  // above 1% of extent
    cloud.log_scales = {big, big, big};
    cloud.opacities = {0.0f};
    cloud.features = {1.0f, 2.0f};
    DensityStats stats;
    stats.reset(1);
    stats.seen[0] = 1;
    stats.grad_norm_sum[0] = 1.0;  // far above tau
    Rng rng(4);
    DensityControlResult r = adaptive_density_control(cloud, stats, cfg, rng);
    CHECK(r.split == 1);
    CHECK(cloud.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(cloud.log_scales[3 * i] ==
              doctest::Approx(big - std::log(1.6)).epsilon(1e-6));
    CHECK(r.source[0] == -1);
    CHECK(r.source[1] == -1);
}

TEST_CASE("max_gaussians caps growth but never pruning") {
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.tau_grad = 1e-9;
    cfg.max_gaussians = 1;  // no room to grow
    GaussianCloud cloud;
    cloud.mode = CloudMode::Feature;
    cloud.feature_dim = 1;
    cloud.scene_extent = 1.0;
    for (int i = 0; i < 2; ++i) {
        cloud.positions.insert(cloud.positions.end(), {0, 0, float(i)});
        cloud.rotations.insert(cloud.rotations.end(), {1, 0, 0, 0});
        cloud.log_scales.insert(cloud.log_scales.end(), {-3, -3, -3});
        cloud.opacities.push_back(i == 0 ? -30.0f : 0.0f);
        cloud.features.push_back(1.0f);
    }
    DensityStats stats;
    stats.reset(2);
    stats.seen[1] = 1;
    stats.grad_norm_sum[1] = 1.0;
    Rng rng(5);
    DensityControlResult r = adaptive_density_control(cloud, stats, cfg, rng);
    CHECK(r.pruned == 1);
    CHECK(r.cloned == 0);
    CHECK(r.split == 0);
    CHECK(cloud.size() == 1);
}

TEST_CASE("baseline-3dgs reproduces identical loss curves for a fixed seed") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Baseline3dgs);
    for (int run = 0; run < 2; ++run) {
        Trainer a(ds, cfg), b(ds, cfg);
        for (int it = 0; it < 12; ++it) {
            std::size_t view = static_cast<std::size_t>(it) % ds.train_count();
            LossReport ra = a.train_step(view);
            LossReport rb = b.train_step(view);
            CHECK(ra.total == rb.total);
            CHECK(ra.rgb == rb.rgb);
        }
    }
}

TEST_CASE("fits with the same seed are byte-identical") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.iterations = 25;
    FitResult a = fit(ds, cfg);
    FitResult b = fit(ds, cfg);
    CHECK(a.cloud.positions == b.cloud.positions);
    CHECK(a.cloud.features == b.cloud.features);
    CHECK(a.cloud.opacities == b.cloud.opacities);
    for (std::size_t l = 0; l < a.scene_decoder.layers.size(); ++l)
        CHECK(a.scene_decoder.layers[l].weights == b.scene_decoder.layers[l].weights);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].psnr_s == b.history[i].psnr_s);
}

TEST_CASE("fits are byte-identical across thread counts") {
    PairedDataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.iterations = 20;
    cfg.threads = 1;
    FitResult a = fit(ds, cfg);
    cfg.threads = 2;
    FitResult b = fit(ds, cfg);
    cfg.threads = 8;
    FitResult c = fit(ds, cfg);
    CHECK(a.cloud.features == b.cloud.features);
    CHECK(a.cloud.features == c.cloud.features);
    CHECK(a.cloud.positions == c.cloud.positions);
    for (std::size_t l = 0; l < a.scene_decoder.layers.size(); ++l) {
        CHECK(a.scene_decoder.layers[l].weights == c.scene_decoder.layers[l].weights);
        CHECK(a.message_decoder.layers[l].weights == c.message_decoder.layers[l].weights);
    }
}

TEST_CASE("non-finite losses abort with diagnostics") {
    PairedDataset ds = tiny_dataset();
    for (double& v : ds.entries[0].image.data) v = std::nan("");
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    Trainer trainer(ds, cfg);
    try {
        trainer.train_step(0);
        FAIL("expected TrainAbort");
    } catch (const TrainAbort& e) {
        std::string msg = e.what();
        CHECK(msg.find("iteration 0") != std::string::npos);
        CHECK(msg.find("view 0") != std::string::npos);
    }
}

TEST_CASE("RTWS freezes geometry bit-exactly and zero iterations change nothing") {
    ts::ToyDatasetSpec spec;
    spec.views = 4;
    spec.size = 16;
    spec.hidden_streams = 1;
    PairedDataset ds = ts::make_toy_dataset(spec);
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.iterations = 10;
    FitResult fitted = fit(ds, cfg);

    FeatureImage w_cop = ts::make_smooth_image(9, 16, 16);
    RtwsConfig rtws;
    rtws.pretrain_iterations = 4;
    rtws.finetune_iterations = 6;
    rtws.decoder_iterations = 4;
    rtws.encoder_width = 4;
    rtws.decoder_width = 6;
    RtwsResult out = rtws_finetune(fitted.cloud, fitted.scene_decoder, ds, w_cop, rtws);
    CHECK(out.cloud.positions == fitted.cloud.positions);
    CHECK(out.cloud.rotations == fitted.cloud.rotations);
    CHECK(out.cloud.log_scales == fitted.cloud.log_scales);
    CHECK(out.cloud.opacities == fitted.cloud.opacities);
    CHECK_FALSE(out.cloud.features == fitted.cloud.features);  // features moved

    RtwsConfig frozen = rtws;
    frozen.finetune_iterations = 0;
    RtwsResult none = rtws_finetune(fitted.cloud, fitted.scene_decoder, ds, w_cop, frozen);
    CHECK(none.cloud.features == fitted.cloud.features);
}

TEST_CASE("watermark embedding stays within the residual bound") {
    FeatureImage cover = ts::make_smooth_image(12, 16, 16);
    FeatureImage mark = ts::make_smooth_image(13, 16, 16);
    ConvStack encoder = make_conv_stack({8, 4, 3}, FinalAct::Tanh, 3);
    FeatureImage embedded = apply_watermark(encoder, cover, mark, 0.02);
    for (std::size_t i = 0; i < cover.data.size(); ++i)
        CHECK(std::abs(embedded.data[i] - cover.data[i]) <= 0.02 + 1e-12);
}

TEST_CASE("held-out metrics improve over a short hider fit") {
    ts::ToyDatasetSpec spec;
    spec.views = 9;  // one held-out view
    spec.size = 16;
    PairedDataset ds = ts::make_toy_dataset(spec);
    TrainConfig cfg = tiny_config(TrainMode::Hider);
    cfg.iterations = 150;
    cfg.eval_interval = 150;
    cfg.densify_start = 1000;
    FitResult result = fit(ds, cfg);
    REQUIRE(result.history.size() >= 2);
    CHECK(result.history.back().psnr_s > result.history.front().psnr_s);
    CHECK(result.history.back().psnr_m > result.history.front().psnr_m);
}
