// Command-line front end: fit / render / extract / prune / metrics / detect
// / rtws over the manifest + PLY + checkpoint artifact set.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gshider/assets_io.hpp"
#include "gshider/steg_eval.hpp"
#include "gshider/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gshider;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitTrainAbort = 2;
constexpr int kExitChannelMismatch = 3;

struct CliConfig {
    TrainConfig train;
    std::string manifest;
    std::string out = "out";
};

const char* kKnownKeys[] = {
    "mode",         "iterations",      "lambda",          "beta",
    "gamma",        "feature_dim",     "hidden_count",    "lr_position",
    "lr_feature",   "lr_opacity",      "lr_scale",        "lr_rotation",
    "lr_decoder",   "densify_interval", "densify_start",  "densify_end",
    "tau_grad",     "eps_prune",       "split_scale_fraction", "max_gaussians",
    "decoder_width", "decoder_depth",  "init_random_points", "seed",
    "background",   "eval_interval",   "threads",         "manifest",
    "out"};

CliConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config parse error: " + std::string(e.what()));
    }
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : kKnownKeys) known = known || item.key() == k;
        if (!known) throw std::runtime_error("unknown config key: " + item.key());
    }
    CliConfig cfg;
    TrainConfig& t = cfg.train;
    auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    if (j.contains("mode")) t.mode = train_mode_from_string(j.at("mode").get<std::string>());
    get("iterations", t.iterations);
    get("lambda", t.lambda);
    get("beta", t.beta);
    get("gamma", t.gamma);
    get("feature_dim", t.feature_dim);
    get("hidden_count", t.hidden_count);
    get("lr_position", t.lr_position);
    get("lr_feature", t.lr_feature);
    get("lr_opacity", t.lr_opacity);
    get("lr_scale", t.lr_scale);
    get("lr_rotation", t.lr_rotation);
    get("lr_decoder", t.lr_decoder);
    get("densify_interval", t.densify_interval);
    get("densify_start", t.densify_start);
    get("densify_end", t.densify_end);
    get("tau_grad", t.tau_grad);
    get("eps_prune", t.eps_prune);
    get("split_scale_fraction", t.split_scale_fraction);
    get("max_gaussians", t.max_gaussians);
    get("decoder_width", t.decoder_width);
    get("decoder_depth", t.decoder_depth);
    get("init_random_points", t.init_random_points);
    get("seed", t.seed);
    get("background", t.background);
    get("eval_interval", t.eval_interval);
    get("threads", t.threads);
    get("manifest", cfg.manifest);
    get("out", cfg.out);
    return cfg;
}

// Training-relevant fields only; paths stay out so identical runs into
// different directories produce identical checkpoint bytes.
json config_to_json(const CliConfig& cfg) {
    const TrainConfig& t = cfg.train;
    return json{{"mode", to_string(t.mode)},
                {"iterations", t.iterations},
                {"lambda", t.lambda},
                {"beta", t.beta},
                {"gamma", t.gamma},
                {"feature_dim", t.feature_dim},
                {"hidden_count", t.hidden_count},
                {"lr_position", t.lr_position},
                {"lr_feature", t.lr_feature},
                {"lr_opacity", t.lr_opacity},
                {"lr_scale", t.lr_scale},
                {"lr_rotation", t.lr_rotation},
                {"lr_decoder", t.lr_decoder},
                {"densify_interval", t.densify_interval},
                {"densify_start", t.densify_start},
                {"densify_end", t.densify_end},
                {"tau_grad", t.tau_grad},
                {"eps_prune", t.eps_prune},
                {"split_scale_fraction", t.split_scale_fraction},
                {"max_gaussians", t.max_gaussians},
                {"decoder_width", t.decoder_width},
                {"decoder_depth", t.decoder_depth},
                {"init_random_points", t.init_random_points},
                {"seed", t.seed},
                {"background", t.background},
                {"eval_interval", t.eval_interval}};
}

PairedDataset load_dataset_for(const std::string& manifest_path) {
    TransformsManifest m = read_manifest(manifest_path);
    return load_dataset(m, fs::path(manifest_path).parent_path().string());
}

std::string view_name(const char* prefix, std::size_t v, int stream = -1) {
    char buf[64];
    if (stream < 0)
        std::snprintf(buf, sizeof(buf), "%s_%03zu.png", prefix, v);
    else
        std::snprintf(buf, sizeof(buf), "%s_%03zu_s%d.png", prefix, v, stream);
    return buf;
}

void write_history_csv(const std::vector<MetricsRow>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "iteration,loss_rgb,loss_mes,psnr_s,psnr_m\n";
    char line[192];
    for (const MetricsRow& row : history) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.4f,%.4f\n", row.iteration,
                      row.loss_rgb, row.loss_mes, row.psnr_s, row.psnr_m);
        out << line;
    }
}

FeatureImage clamp01(FeatureImage img) {
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

int run_fit(const CliConfig& cfg) {
    PairedDataset dataset = load_dataset_for(cfg.manifest);
    fs::create_directories(cfg.out);
    FitResult result = fit(dataset, cfg.train);
    write_ply(result.cloud, (fs::path(cfg.out) / "cloud.ply").string());
    std::string echo = config_to_json(cfg).dump();
    if (!result.scene_decoder.empty())
        write_checkpoint(result.scene_decoder,
                         (fs::path(cfg.out) / "scene_decoder.bin").string(), echo,
                         cfg.train.seed);
    if (!result.message_decoder.empty())
        write_checkpoint(result.message_decoder,
                         (fs::path(cfg.out) / "message_decoder.bin").string(), echo,
                         cfg.train.seed);
    write_history_csv(result.history, (fs::path(cfg.out) / "metrics.csv").string());

    MetricsReport report = evaluate(
        result.cloud, result.scene_decoder.empty() ? nullptr : &result.scene_decoder,
        result.message_decoder.empty() ? nullptr : &result.message_decoder, dataset,
        /*held_out_only=*/true, cfg.train.threads);
    json summary = {{"mode", to_string(cfg.train.mode)},
                    {"iterations", cfg.train.iterations},
                    {"gaussians", result.cloud.size()},
                    {"psnr_s", report.mean_psnr_s},
                    {"ssim_s", report.mean_ssim_s},
                    {"psnr_m", report.mean_psnr_m},
                    {"ssim_m", report.mean_ssim_m},
                    {"render_decode_seconds_per_view", report.mean_seconds}};
    std::ofstream((fs::path(cfg.out) / "summary.json").string()) << summary.dump(2) << "\n";
    std::printf("fit: %zu gaussians, held-out psnr_s %.2f dB psnr_m %.2f dB\n",
                result.cloud.size(), report.mean_psnr_s, report.mean_psnr_m);
    return 0;
}

struct RenderArgs {
    std::string ply, scene_decoder, message_decoder, manifest, out;
    int threads = 1;
};

int run_render(const RenderArgs& args, bool extract) {
    GaussianCloud cloud = read_ply(args.ply);
    TransformsManifest manifest = read_manifest(args.manifest);
    fs::create_directories(args.out);
    RasterizeOptions opts;
    opts.threads = args.threads;

    std::optional<ConvStack> decoder;
    const std::string& path = extract ? args.message_decoder : args.scene_decoder;
    if (!path.empty()) decoder = read_checkpoint(path);
    if (cloud.mode == CloudMode::Feature) {
        if (!decoder) {
            std::fprintf(stderr, "feature cloud requires a decoder checkpoint\n");
            return kExitChannelMismatch;
        }
        if (decoder->input_channels() != cloud.feature_dim) {
            std::fprintf(stderr, "decoder expects %d channels, cloud renders %d\n",
                         decoder->input_channels(), cloud.feature_dim);
            return kExitChannelMismatch;
        }
    } else if (decoder && decoder->input_channels() != 3) {
        std::fprintf(stderr, "decoder expects %d channels, cloud renders 3\n",
                     decoder->input_channels());
        return kExitChannelMismatch;
    }

    for (std::size_t v = 0; v < manifest.frames.size(); ++v) {
        const auto& frame = manifest.frames[v];
        Camera cam = Camera::from_camera_to_world(manifest.width, manifest.height,
                                                  manifest.fx, manifest.fy, manifest.cx,
                                                  manifest.cy, frame.rotation, frame.origin,
                                                  manifest.near, manifest.far);
        FeatureImage result;
        if (cloud.mode == CloudMode::Feature) {
            std::vector<double> bg(static_cast<std::size_t>(cloud.feature_dim), 0.0);
            FeatureImage feat = render_image(cloud, cam, bg, opts);
            result = decoder_forward(*decoder, feat, nullptr, args.threads);
        } else {
            result = render_image(cloud, cam, {0, 0, 0}, opts,
                                  /*second_sh=*/extract && cloud.mode == CloudMode::ShDouble);
            if (decoder) result = decoder_forward(*decoder, result, nullptr, args.threads);
        }
        const char* prefix = extract ? "hidden" : "view";
        int streams = result.channels / 3;
        if (streams <= 1) {
            save_image(clamp01(result), (fs::path(args.out) / view_name(prefix, v)).string());
        } else {
            for (int l = 0; l < streams; ++l) {
                FeatureImage slice(result.height, result.width, 3);
                for (int y = 0; y < result.height; ++y)
                    for (int x = 0; x < result.width; ++x)
                        for (int c = 0; c < 3; ++c)
                            slice.at(y, x, c) = result.at(y, x, 3 * l + c);
                save_image(clamp01(slice),
                           (fs::path(args.out) / view_name(prefix, v, l)).string());
            }
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GS-Hider style steganographic Gaussian splatting toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker threads inside render/decode passes");

    // fit ---------------------------------------------------------------
    auto* fit_cmd = app.add_subcommand(
        "fit",
        "Optimize a cloud (and decoders) from a manifest.\n"
        "Config defaults: mode=hider iterations=3000 lambda=0.5 beta=0.2 gamma=0.2\n"
        "feature_dim=16 hidden_count=1 decoder_width=64 decoder_depth=5 seed=0\n"
        "background=black eval_interval=250 max_gaussians=0 init_random_points=1000\n"
        "lr_position=1.6e-4 lr_feature=2.5e-3 lr_opacity=5e-2 lr_scale=5e-3\n"
        "lr_rotation=1e-3 lr_decoder=1e-3 densify_interval=100 densify_start=500\n"
        "densify_end=-1 (60%) tau_grad=2e-4 eps_prune=0.005 split_scale_fraction=0.01");
    std::string config_path;
    fit_cmd->add_option("--config", config_path, "JSON config file")->required();
    std::string mode_flag, manifest_flag, out_flag, background_flag;
    int iterations_flag = -1, feature_dim_flag = -1, hidden_count_flag = -1;
    int decoder_width_flag = -1, decoder_depth_flag = -1, eval_interval_flag = -1;
    double lambda_flag = -1.0, beta_flag = -1.0, gamma_flag = -1.0;
    std::int64_t seed_flag = -1, max_gaussians_flag = -1, init_points_flag = -1;
    fit_cmd->add_option("--mode", mode_flag,
                        "hider|hider-image|hider-multi|baseline-3dgs|baseline-sh|baseline-decoder");
    fit_cmd->add_option("--manifest", manifest_flag, "Dataset manifest JSON");
    fit_cmd->add_option("--out", out_flag, "Output directory");
    fit_cmd->add_option("--iterations", iterations_flag, "Optimization steps");
    fit_cmd->add_option("--lambda", lambda_flag, "Message loss weight");
    fit_cmd->add_option("--beta", beta_flag, "Message SSIM weight");
    fit_cmd->add_option("--gamma", gamma_flag, "Scene SSIM weight");
    fit_cmd->add_option("--feature_dim", feature_dim_flag, "Coupled feature width M");
    fit_cmd->add_option("--hidden_count", hidden_count_flag, "Hidden streams L");
    fit_cmd->add_option("--decoder_width", decoder_width_flag, "Decoder hidden channels");
    fit_cmd->add_option("--decoder_depth", decoder_depth_flag, "Decoder conv layers");
    fit_cmd->add_option("--seed", seed_flag, "Run seed");
    fit_cmd->add_option("--background", background_flag, "black|white (RGB modes)");
    fit_cmd->add_option("--eval_interval", eval_interval_flag, "Metric logging stride");
    fit_cmd->add_option("--max_gaussians", max_gaussians_flag, "Cap on cloud growth");
    fit_cmd->add_option("--init_random_points", init_points_flag,
                        "Random-init cloud size when the dataset has no seeds");

    // render / extract ----------------------------------------------------
    RenderArgs render_args;
    auto* render_cmd = app.add_subcommand("render", "Render original-scene views");
    render_cmd->add_option("--ply", render_args.ply)->required();
    render_cmd->add_option("--scene-decoder", render_args.scene_decoder);
    render_cmd->add_option("--manifest", render_args.manifest)->required();
    render_cmd->add_option("--out", render_args.out)->required();

    RenderArgs extract_args;
    auto* extract_cmd = app.add_subcommand("extract", "Decode hidden-message views");
    extract_cmd->add_option("--ply", extract_args.ply)->required();
    extract_cmd->add_option("--message-decoder", extract_args.message_decoder);
    extract_cmd->add_option("--manifest", extract_args.manifest)->required();
    extract_cmd->add_option("--out", extract_args.out)->required();

    // prune ---------------------------------------------------------------
    auto* prune_cmd = app.add_subcommand("prune", "Remove Gaussians by opacity or at random");
    std::string prune_ply, prune_method = "sequential", prune_out;
    double prune_ratio = 0.0;
    std::uint64_t prune_seed = 0;
    prune_cmd->add_option("--ply", prune_ply)->required();
    prune_cmd->add_option("--method", prune_method, "sequential|random");
    prune_cmd->add_option("--ratio", prune_ratio, "Fraction to remove, in [0,1)")->required();
    prune_cmd->add_option("--seed", prune_seed, "Random pruning seed");
    prune_cmd->add_option("--out-ply", prune_out, "Output PLY path")->required();

    // metrics ---------------------------------------------------------------
    auto* metrics_cmd = app.add_subcommand("metrics", "Held-out fidelity metrics");
    std::string m_ply, m_scene, m_message, m_manifest, m_out;
    bool m_all_views = false;
    metrics_cmd->add_option("--ply", m_ply)->required();
    metrics_cmd->add_option("--scene-decoder", m_scene);
    metrics_cmd->add_option("--message-decoder", m_message);
    metrics_cmd->add_option("--manifest", m_manifest)->required();
    metrics_cmd->add_option("--out", m_out)->required();
    metrics_cmd->add_flag("--all-views", m_all_views, "Evaluate every view, not just held-out");

    // detect ---------------------------------------------------------------
    auto* detect_cmd = app.add_subcommand("detect", "Steganalysis ROC over renders vs ground truth");
    std::string d_ply, d_scene, d_manifest, d_out, d_pos_dir, d_neg_dir;
    detect_cmd->add_option("--ply", d_ply);
    detect_cmd->add_option("--scene-decoder", d_scene);
    detect_cmd->add_option("--manifest", d_manifest);
    detect_cmd->add_option("--out", d_out)->required();
    detect_cmd->add_option("--pos-dir", d_pos_dir, "Directory of PNGs scored as positives");
    detect_cmd->add_option("--neg-dir", d_neg_dir, "Directory of PNGs scored as negatives");

    // rtws ---------------------------------------------------------------
    auto* rtws_cmd = app.add_subcommand("rtws", "Watermark fine-tune for 2D-view copyright extraction");
    std::string r_ply, r_scene, r_manifest, r_watermark, r_out;
    RtwsConfig rtws_cfg;
    rtws_cmd->add_option("--ply", r_ply)->required();
    rtws_cmd->add_option("--scene-decoder", r_scene)->required();
    rtws_cmd->add_option("--manifest", r_manifest)->required();
    rtws_cmd->add_option("--watermark", r_watermark, "Copyright image PNG")->required();
    rtws_cmd->add_option("--out", r_out)->required();
    rtws_cmd->add_option("--iterations", rtws_cfg.finetune_iterations,
                         "Feature fine-tune steps");
    rtws_cmd->add_option("--pretrain-iterations", rtws_cfg.pretrain_iterations);
    rtws_cmd->add_option("--decoder-iterations", rtws_cfg.decoder_iterations);
    rtws_cmd->add_option("--rtws-seed", rtws_cfg.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Help exits 0; any flag/usage problem collapses to exit 1.
        int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (fit_cmd->parsed()) {
            CliConfig cfg;
            try {
                cfg = parse_config_file(config_path);
                if (!mode_flag.empty()) cfg.train.mode = train_mode_from_string(mode_flag);
                if (!manifest_flag.empty()) cfg.manifest = manifest_flag;
                if (!out_flag.empty()) cfg.out = out_flag;
                if (!background_flag.empty()) cfg.train.background = background_flag;
                if (iterations_flag >= 0) cfg.train.iterations = iterations_flag;
                if (lambda_flag >= 0.0) cfg.train.lambda = lambda_flag;
                if (beta_flag >= 0.0) cfg.train.beta = beta_flag;
                if (gamma_flag >= 0.0) cfg.train.gamma = gamma_flag;
                if (feature_dim_flag >= 0) cfg.train.feature_dim = feature_dim_flag;
                if (hidden_count_flag >= 0) cfg.train.hidden_count = hidden_count_flag;
                if (decoder_width_flag >= 0) cfg.train.decoder_width = decoder_width_flag;
                if (decoder_depth_flag >= 0) cfg.train.decoder_depth = decoder_depth_flag;
                if (eval_interval_flag >= 0) cfg.train.eval_interval = eval_interval_flag;
                if (seed_flag >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed_flag);
                if (max_gaussians_flag >= 0)
                    cfg.train.max_gaussians = static_cast<std::size_t>(max_gaussians_flag);
                if (init_points_flag >= 0)
                    cfg.train.init_random_points = static_cast<std::size_t>(init_points_flag);
                cfg.train.threads = threads;
                if (cfg.manifest.empty())
                    throw std::runtime_error("no manifest given (config key or --manifest)");
                cfg.train.validate();
            } catch (const std::exception& e) {
                std::fprintf(stderr, "config error: %s\n", e.what());
                return kExitConfig;
            }
            try {
                return run_fit(cfg);
            } catch (const TrainAbort& e) {
                std::fprintf(stderr, "training aborted: %s\n", e.what());
                return kExitTrainAbort;
            }
        }
        if (render_cmd->parsed()) {
            render_args.threads = threads;
            return run_render(render_args, /*extract=*/false);
        }
        if (extract_cmd->parsed()) {
            extract_args.threads = threads;
            return run_render(extract_args, /*extract=*/true);
        }
        if (prune_cmd->parsed()) {
            GaussianCloud cloud = read_ply(prune_ply);
            GaussianCloud pruned;
            if (prune_method == "sequential")
                pruned = prune_sequential(cloud, prune_ratio);
            else if (prune_method == "random")
                pruned = prune_random(cloud, prune_ratio, prune_seed);
            else {
                std::fprintf(stderr, "unknown prune method: %s\n", prune_method.c_str());
                return kExitConfig;
            }
            write_ply(pruned, prune_out);
            std::printf("prune: %zu -> %zu gaussians\n", cloud.size(), pruned.size());
            return 0;
        }
        if (metrics_cmd->parsed()) {
            GaussianCloud cloud = read_ply(m_ply);
            std::optional<ConvStack> scene, message;
            if (!m_scene.empty()) scene = read_checkpoint(m_scene);
            if (!m_message.empty()) message = read_checkpoint(m_message);
            PairedDataset dataset = load_dataset_for(m_manifest);
            fs::create_directories(m_out);
            MetricsReport report =
                evaluate(cloud, scene ? &*scene : nullptr, message ? &*message : nullptr,
                         dataset, !m_all_views, threads);
            write_metrics_csv(report, (fs::path(m_out) / "metrics.csv").string());
            json summary = {{"psnr_s", report.mean_psnr_s},
                            {"ssim_s", report.mean_ssim_s},
                            {"psnr_m", report.mean_psnr_m},
                            {"ssim_m", report.mean_ssim_m},
                            {"render_decode_seconds_per_view", report.mean_seconds}};
            std::ofstream((fs::path(m_out) / "summary.json").string())
                << summary.dump(2) << "\n";
            std::printf("metrics: psnr_s %.2f dB, psnr_m %.2f dB, %.4f s/view\n",
                        report.mean_psnr_s, report.mean_psnr_m, report.mean_seconds);
            return 0;
        }
        if (detect_cmd->parsed()) {
            std::vector<double> pos, neg;
            fs::create_directories(d_out);
            if (!d_pos_dir.empty() && !d_neg_dir.empty()) {
                auto score_dir = [](const std::string& dir, std::vector<double>& out) {
                    std::vector<fs::path> files;
                    for (const auto& e : fs::directory_iterator(dir))
                        if (e.path().extension() == ".png") files.push_back(e.path());
                    std::sort(files.begin(), files.end());
                    for (const auto& f : files) out.push_back(detector_score(load_image(f.string())));
                };
                score_dir(d_pos_dir, pos);
                score_dir(d_neg_dir, neg);
            } else {
                if (d_ply.empty() || d_manifest.empty()) {
                    std::fprintf(stderr,
                                 "detect needs --ply/--manifest or --pos-dir/--neg-dir\n");
                    return kExitConfig;
                }
                GaussianCloud cloud = read_ply(d_ply);
                std::optional<ConvStack> scene;
                if (!d_scene.empty()) scene = read_checkpoint(d_scene);
                if (cloud.mode == CloudMode::Feature && !scene) {
                    std::fprintf(stderr, "feature cloud requires --scene-decoder\n");
                    return kExitChannelMismatch;
                }
                PairedDataset dataset = load_dataset_for(d_manifest);
                RasterizeOptions opts;
                opts.threads = threads;
                for (const DatasetEntry& e : dataset.entries) {
                    FeatureImage render;
                    if (cloud.mode == CloudMode::Feature) {
                        std::vector<double> bg(static_cast<std::size_t>(cloud.feature_dim), 0.0);
                        render = decoder_forward(*scene, render_image(cloud, e.camera, bg, opts),
                                                 nullptr, threads);
                    } else {
                        render = render_image(cloud, e.camera, {0, 0, 0}, opts);
                    }
                    pos.push_back(detector_score(clamp01(render)));
                    neg.push_back(detector_score(e.image));
                }
            }
            DetectionReport report = roc_curve(pos, neg);
            write_roc_csv(report, (fs::path(d_out) / "roc.csv").string());
            json summary = {{"auc", report.auc},
                            {"positives", pos.size()},
                            {"negatives", neg.size()}};
            std::ofstream((fs::path(d_out) / "summary.json").string())
                << summary.dump(2) << "\n";
            std::printf("detect: AUC %.4f over %zu/%zu images\n", report.auc, pos.size(),
                        neg.size());
            return 0;
        }
        if (rtws_cmd->parsed()) {
            GaussianCloud cloud = read_ply(r_ply);
            ConvStack scene = read_checkpoint(r_scene);
            PairedDataset dataset = load_dataset_for(r_manifest);
            FeatureImage w_cop = load_image(r_watermark);
            rtws_cfg.threads = threads;
            RtwsResult result;
            try {
                result = rtws_finetune(cloud, scene, dataset, w_cop, rtws_cfg);
            } catch (const TrainAbort& e) {
                std::fprintf(stderr, "rtws aborted: %s\n", e.what());
                return kExitTrainAbort;
            }
            fs::create_directories(r_out);
            write_ply(result.cloud, (fs::path(r_out) / "cloud.ply").string());
            write_checkpoint(result.encoder,
                             (fs::path(r_out) / "watermark_encoder.bin").string());
            write_checkpoint(result.decoder,
                             (fs::path(r_out) / "watermark_decoder.bin").string());
            std::printf("rtws: fine-tuned %zu gaussians (features only)\n",
                        result.cloud.size());
            return 0;
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return 0;
}
