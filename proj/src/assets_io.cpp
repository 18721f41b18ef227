#include "gshider/assets_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gshider {

namespace {

using nlohmann::json;

std::vector<std::string> cloud_property_names(CloudMode mode, int feature_dim) {
    std::vector<std::string> names = {"x", "y", "z"};
    if (mode == CloudMode::Feature) {
        for (int i = 0; i < feature_dim; ++i) names.push_back("f_feat_" + std::to_string(i));
    } else {
        for (int i = 0; i < 3; ++i) names.push_back("f_dc_" + std::to_string(i));
        for (int i = 0; i < 45; ++i) names.push_back("f_rest_" + std::to_string(i));
        if (mode == CloudMode::ShDouble) {
            for (int i = 0; i < 3; ++i) names.push_back("f_dc_" + std::to_string(i) + "_h2");
            for (int i = 0; i < 45; ++i)
                names.push_back("f_rest_" + std::to_string(i) + "_h2");
        }
    }
    names.push_back("opacity");
    for (int i = 0; i < 3; ++i) names.push_back("scale_" + std::to_string(i));
    for (int i = 0; i < 4; ++i) names.push_back("rot_" + std::to_string(i));
    return names;
}

// SH coefficients are stored channel-major in memory (16 per channel); on
// disk they follow the reference layout: f_dc = per-channel DC, f_rest =
// channel-major higher orders.
void sh_to_disk(const float* sh, float* out) {
    for (int ch = 0; ch < 3; ++ch) out[ch] = sh[ch * kShCoeffsPerChannel];
    for (int ch = 0; ch < 3; ++ch)
        for (int k = 1; k < kShCoeffsPerChannel; ++k)
            out[3 + ch * 15 + (k - 1)] = sh[ch * kShCoeffsPerChannel + k];
}

void sh_from_disk(const float* disk, float* sh) {
    for (int ch = 0; ch < 3; ++ch) sh[ch * kShCoeffsPerChannel] = disk[ch];
    for (int ch = 0; ch < 3; ++ch)
        for (int k = 1; k < kShCoeffsPerChannel; ++k)
            sh[ch * kShCoeffsPerChannel + k] = disk[3 + ch * 15 + (k - 1)];
}

}  // namespace

void write_ply(const GaussianCloud& cloud, const std::string& path) {
    cloud.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoErrorKind::MissingFile, "cannot open for write: " + path);
    std::vector<std::string> names = cloud_property_names(cloud.mode, cloud.feature_dim);
    std::ostringstream header;
    header << "ply\n"
           << "format binary_little_endian 1.0\n"
           << "comment gshider_mode=" << to_string(cloud.mode) << "\n"
           << "comment gshider_M=" << cloud.feature_dim << "\n"
           << "element vertex " << cloud.size() << "\n";
    for (const std::string& n : names) header << "property float " << n << "\n";
    header << "end_header\n";
    out << header.str();

    std::size_t stride = names.size();
    std::vector<float> row(stride);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::size_t k = 0;
        for (int c = 0; c < 3; ++c) row[k++] = cloud.positions[3 * i + c];
        if (cloud.mode == CloudMode::Feature) {
            for (int c = 0; c < cloud.feature_dim; ++c)
                row[k++] = cloud.features[i * static_cast<std::size_t>(cloud.feature_dim) + c];
        } else {
            sh_to_disk(cloud.sh.data() + i * kShCoeffCount, row.data() + k);
            k += kShCoeffCount;
            if (cloud.mode == CloudMode::ShDouble) {
                sh_to_disk(cloud.sh2.data() + i * kShCoeffCount, row.data() + k);
                k += kShCoeffCount;
            }
        }
        row[k++] = cloud.opacities[i];
        for (int c = 0; c < 3; ++c) row[k++] = cloud.log_scales[3 * i + c];
        for (int c = 0; c < 4; ++c) row[k++] = cloud.rotations[4 * i + c];
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(stride * sizeof(float)));
    }
    if (!out) throw IoError(IoErrorKind::TruncatedBody, "write failed: " + path);
}

GaussianCloud read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrorKind::MissingFile, "cannot open: " + path);

    std::string line;
    if (!std::getline(in, line) || line != "ply")
        throw IoError(IoErrorKind::MalformedHeader, "not a PLY file: " + path);
    if (!std::getline(in, line) || line != "format binary_little_endian 1.0")
        throw IoError(IoErrorKind::MalformedHeader, "unsupported PLY format: " + path);

    std::string mode_str;
    int header_m = -1;
    std::size_t vertex_count = 0;
    bool have_vertex = false;
    std::vector<std::string> properties;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") {
            std::string rest;
            ls >> rest;
            if (rest.rfind("gshider_mode=", 0) == 0) mode_str = rest.substr(13);
            else if (rest.rfind("gshider_M=", 0) == 0) header_m = std::stoi(rest.substr(10));
        } else if (word == "element") {
            std::string kind;
            ls >> kind >> vertex_count;
            if (kind != "vertex")
                throw IoError(IoErrorKind::MalformedHeader,
                              "unsupported element '" + kind + "' in " + path);
            have_vertex = true;
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float")
                throw IoError(IoErrorKind::PropertyMismatch,
                              "unsupported property type '" + type + "' in " + path);
            properties.push_back(name);
        } else if (word.empty()) {
            throw IoError(IoErrorKind::MalformedHeader, "empty header line in " + path);
        } else {
            throw IoError(IoErrorKind::MalformedHeader,
                          "unexpected header token '" + word + "' in " + path);
        }
    }
    if (line != "end_header" || !have_vertex)
        throw IoError(IoErrorKind::MalformedHeader, "incomplete PLY header in " + path);
    if (mode_str.empty() || header_m < 0)
        throw IoError(IoErrorKind::MalformedHeader,
                      "missing gshider mode/M comments in " + path);
    CloudMode mode;
    try {
        mode = cloud_mode_from_string(mode_str);
    } catch (const std::invalid_argument&) {
        throw IoError(IoErrorKind::MalformedHeader,
                      "unknown gshider_mode '" + mode_str + "' in " + path);
    }
    std::vector<std::string> expected = cloud_property_names(mode, header_m);
    if (properties != expected)
        throw IoError(IoErrorKind::HeaderMismatch,
                      "property list does not match mode/M in " + path);

    GaussianCloud cloud;
    cloud.mode = mode;
    cloud.feature_dim = mode == CloudMode::Feature ? header_m : 0;
    cloud.positions.resize(3 * vertex_count);
    cloud.rotations.resize(4 * vertex_count);
    cloud.log_scales.resize(3 * vertex_count);
    cloud.opacities.resize(vertex_count);
    if (mode == CloudMode::Feature) {
        cloud.features.resize(static_cast<std::size_t>(header_m) * vertex_count);
    } else {
        cloud.sh.resize(static_cast<std::size_t>(kShCoeffCount) * vertex_count);
        if (mode == CloudMode::ShDouble)
            cloud.sh2.resize(static_cast<std::size_t>(kShCoeffCount) * vertex_count);
    }

    std::size_t stride = expected.size();
    std::vector<float> row(stride);
    for (std::size_t i = 0; i < vertex_count; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(stride * sizeof(float)));
        if (!in)
            throw IoError(IoErrorKind::TruncatedBody,
                          "truncated vertex data at " + std::to_string(i) + " in " + path);
        std::size_t k = 0;
        for (int c = 0; c < 3; ++c) cloud.positions[3 * i + c] = row[k++];
        if (mode == CloudMode::Feature) {
            for (int c = 0; c < header_m; ++c)
                cloud.features[i * static_cast<std::size_t>(header_m) + c] = row[k++];
        } else {
            sh_from_disk(row.data() + k, cloud.sh.data() + i * kShCoeffCount);
            k += kShCoeffCount;
            if (mode == CloudMode::ShDouble) {
                sh_from_disk(row.data() + k, cloud.sh2.data() + i * kShCoeffCount);
                k += kShCoeffCount;
            }
        }
        cloud.opacities[i] = row[k++];
        for (int c = 0; c < 3; ++c) cloud.log_scales[3 * i + c] = row[k++];
        for (int c = 0; c < 4; ++c) cloud.rotations[4 * i + c] = row[k++];
    }
    // Extra bytes after the vertex data mean the header lied about size.
    char probe;
    if (in.read(&probe, 1))
        throw IoError(IoErrorKind::CorruptPayload, "trailing bytes after vertex data in " + path);

    // Estimate extent from the position bounding box for density thresholds.
    if (vertex_count > 0) {
        Vec3 lo = cloud.position(0), hi = cloud.position(0);
        for (std::size_t i = 1; i < vertex_count; ++i) {
            Vec3 p = cloud.position(i);
            lo.x = std::min(lo.x, p.x); hi.x = std::max(hi.x, p.x);
            lo.y = std::min(lo.y, p.y); hi.y = std::max(hi.y, p.y);
            lo.z = std::min(lo.z, p.z); hi.z = std::max(hi.z, p.z);
        }
        double ext = 0.5 * (hi - lo).norm();
        cloud.scene_extent = ext > 0.0 ? ext : 1.0;
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

FeatureImage load_image(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError(IoErrorKind::MissingFile, "cannot open: " + path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        std::fclose(fp);
        throw IoError(IoErrorKind::BadImage, "not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError(IoErrorKind::BadImage, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError(IoErrorKind::BadImage, "PNG decode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    int width = static_cast<int>(png_get_image_width(png, info));
    int height = static_cast<int>(png_get_image_height(png, info));
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    if (bit_depth != 8 || color_type != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError(IoErrorKind::BadImage, "expected 8-bit RGB PNG: " + path);
    }
    std::vector<png_byte> rowbuf(static_cast<std::size_t>(width) * 3);
    FeatureImage out(height, width, 3);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = rowbuf[static_cast<std::size_t>(x) * 3 + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

void save_image(const FeatureImage& image, const std::string& path) {
    if (image.channels != 3)
        throw IoError(IoErrorKind::BadImage, "save_image expects 3 channels");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError(IoErrorKind::MissingFile, "cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError(IoErrorKind::BadImage, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError(IoErrorKind::BadImage, "PNG encode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> rowbuf(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::floor(image.at(y, x, c) * 255.0 + 0.5);  // round half up
                rowbuf[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<png_byte>(std::clamp(v, 0.0, 255.0));
            }
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

TransformsManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoErrorKind::MissingFile, "cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(IoErrorKind::BadManifest, "manifest parse error: " + std::string(e.what()));
    }
    try {
        TransformsManifest m;
        const json& cam = j.at("camera");
        m.width = cam.at("width").get<int>();
        m.height = cam.at("height").get<int>();
        if (cam.contains("fx")) {
            m.fx = cam.at("fx").get<double>();
            m.fy = cam.at("fy").get<double>();
        } else if (cam.contains("fov_x_deg")) {
            double fov = cam.at("fov_x_deg").get<double>() * 3.14159265358979323846 / 180.0;
            m.fx = m.width / (2.0 * std::tan(0.5 * fov));
            m.fy = m.fx;
        } else {
            throw IoError(IoErrorKind::BadManifest, "camera needs fx/fy or fov_x_deg");
        }
        m.cx = cam.contains("cx") ? cam.at("cx").get<double>() : m.width * 0.5;
        m.cy = cam.contains("cy") ? cam.at("cy").get<double>() : m.height * 0.5;
        if (j.contains("near")) m.near = j.at("near").get<double>();
        if (j.contains("far")) m.far = j.at("far").get<double>();
        if (j.contains("hidden_view_index"))
            m.designated_view = j.at("hidden_view_index").get<int>();

        int hidden_streams = -1;
        for (const json& f : j.at("frames")) {
            TransformsManifest::Frame frame;
            const json& t = f.at("transform");
            if (t.size() != 4)
                throw IoError(IoErrorKind::BadManifest, "transform must be 4x4");
            for (int r = 0; r < 3; ++r) {
                if (t[r].size() != 4)
                    throw IoError(IoErrorKind::BadManifest, "transform must be 4x4");
                for (int c = 0; c < 3; ++c) frame.rotation(r, c) = t[r][c].get<double>();
            }
            frame.origin = {t[0][3].get<double>(), t[1][3].get<double>(),
                            t[2][3].get<double>()};
            frame.image_path = f.at("image").get<std::string>();
            if (f.contains("hidden")) {
                if (f.at("hidden").is_string())
                    frame.hidden_paths.push_back(f.at("hidden").get<std::string>());
                else
                    for (const json& h : f.at("hidden"))
                        frame.hidden_paths.push_back(h.get<std::string>());
            }
            if (!frame.hidden_paths.empty()) {
                if (hidden_streams < 0)
                    hidden_streams = static_cast<int>(frame.hidden_paths.size());
                else if (hidden_streams != static_cast<int>(frame.hidden_paths.size()))
                    throw IoError(IoErrorKind::BadManifest,
                                  "inconsistent hidden image count across frames");
            }
            // Orthonormality check, 1e-6 per the manifest contract.
            Mat3 rrt = frame.rotation * frame.rotation.transposed();
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    if (std::abs(rrt(r, c) - (r == c ? 1.0 : 0.0)) > 1e-6)
                        throw IoError(IoErrorKind::BadManifest,
                                      "frame rotation not orthonormal");
            m.frames.push_back(std::move(frame));
        }
        if (m.frames.empty()) throw IoError(IoErrorKind::BadManifest, "manifest has no frames");
        if (m.designated_view >= static_cast<int>(m.frames.size()))
            throw IoError(IoErrorKind::BadManifest, "hidden_view_index out of range");
        return m;
    } catch (const json::exception& e) {
        throw IoError(IoErrorKind::BadManifest, "manifest field error: " + std::string(e.what()));
    }
}

void write_manifest(const TransformsManifest& m, const std::string& path) {
    json j;
    j["camera"] = {{"width", m.width}, {"height", m.height}, {"fx", m.fx},
                   {"fy", m.fy},       {"cx", m.cx},         {"cy", m.cy}};
    j["near"] = m.near;
    j["far"] = m.far;
    if (m.designated_view >= 0) j["hidden_view_index"] = m.designated_view;
    j["frames"] = json::array();
    for (const auto& f : m.frames) {
        json t = json::array();
        for (int r = 0; r < 3; ++r) {
            json row = json::array();
            for (int c = 0; c < 3; ++c) row.push_back(f.rotation(r, c));
            double o = r == 0 ? f.origin.x : (r == 1 ? f.origin.y : f.origin.z);
            row.push_back(o);
            t.push_back(row);
        }
        t.push_back({0.0, 0.0, 0.0, 1.0});
        json frame = {{"transform", t}, {"image", f.image_path}};
        if (f.hidden_paths.size() == 1) frame["hidden"] = f.hidden_paths[0];
        else if (!f.hidden_paths.empty()) frame["hidden"] = f.hidden_paths;
        j["frames"].push_back(frame);
    }
    std::ofstream out(path);
    if (!out) throw IoError(IoErrorKind::MissingFile, "cannot open for write: " + path);
    out << j.dump(2) << "\n";
}

PairedDataset load_dataset(const TransformsManifest& m, const std::string& manifest_dir) {
    namespace fs = std::filesystem;
    PairedDataset ds;
    ds.designated_view = m.designated_view;
    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        if (fp.is_absolute()) return fp.string();
        return (fs::path(manifest_dir) / fp).string();
    };
    for (const auto& f : m.frames) {
        DatasetEntry e;
        e.camera = Camera::from_camera_to_world(m.width, m.height, m.fx, m.fy, m.cx, m.cy,
                                                f.rotation, f.origin, m.near, m.far);
        e.image = load_image(resolve(f.image_path));
        if (e.image.height != m.height || e.image.width != m.width)
            throw IoError(IoErrorKind::BadManifest,
                          "image size does not match camera: " + f.image_path);
        for (const std::string& h : f.hidden_paths) {
            FeatureImage img = load_image(resolve(h));
            if (img.height != m.height || img.width != m.width)
                throw IoError(IoErrorKind::BadManifest,
                              "hidden image size does not match camera: " + h);
            e.hidden.push_back(std::move(img));
        }
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'G', 'S', 'H', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void take(std::istream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError(IoErrorKind::CorruptPayload, "truncated checkpoint: " + path);
}

}  // namespace

void write_checkpoint(const ConvStack& stack, const std::string& path,
                      const std::string& config_echo, std::uint64_t seed) {
    stack.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoErrorKind::MissingFile, "cannot open for write: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put(out, kCheckpointVersion);
    put(out, static_cast<std::uint32_t>(stack.layers.size()));
    put(out, static_cast<std::uint8_t>(stack.final_act));
    for (const ConvLayer& l : stack.layers) {
        put(out, static_cast<std::uint32_t>(l.in_channels));
        put(out, static_cast<std::uint32_t>(l.out_channels));
    }
    for (const ConvLayer& l : stack.layers) {
        out.write(reinterpret_cast<const char*>(l.weights.data()),
                  static_cast<std::streamsize>(l.weights.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(l.bias.data()),
                  static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
    }
    put(out, static_cast<std::uint32_t>(config_echo.size()));
    out.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    put(out, seed);
    if (!out) throw IoError(IoErrorKind::TruncatedBody, "write failed: " + path);
}

ConvStack read_checkpoint(const std::string& path, CheckpointInfo* info) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrorKind::MissingFile, "cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw IoError(IoErrorKind::MalformedHeader, "not a checkpoint file: " + path);
    std::uint32_t version = 0;
    take(in, version, path);
    if (version != kCheckpointVersion)
        throw IoError(IoErrorKind::VersionMismatch,
                      "unsupported checkpoint version " + std::to_string(version));
    std::uint32_t n_layers = 0;
    take(in, n_layers, path);
    std::uint8_t act = 0;
    take(in, act, path);
    if (n_layers == 0 || n_layers > 64 || act > 2)
        throw IoError(IoErrorKind::CorruptPayload, "implausible topology in " + path);
    ConvStack stack;
    stack.final_act = static_cast<FinalAct>(act);
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        std::uint32_t ci = 0, co = 0;
        take(in, ci, path);
        take(in, co, path);
        if (ci == 0 || co == 0 || ci > 4096 || co > 4096)
            throw IoError(IoErrorKind::CorruptPayload, "implausible layer shape in " + path);
        ConvLayer layer;
        layer.in_channels = static_cast<int>(ci);
        layer.out_channels = static_cast<int>(co);
        layer.weights.resize(layer.weight_count());
        layer.bias.resize(co);
        stack.layers.push_back(std::move(layer));
    }
    for (ConvLayer& l : stack.layers) {
        in.read(reinterpret_cast<char*>(l.weights.data()),
                static_cast<std::streamsize>(l.weights.size() * sizeof(float)));
        in.read(reinterpret_cast<char*>(l.bias.data()),
                static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
        if (!in) throw IoError(IoErrorKind::CorruptPayload, "truncated weights in " + path);
    }
    std::uint32_t echo_len = 0;
    take(in, echo_len, path);
    std::string echo(echo_len, '\0');
    if (echo_len > 0) {
        in.read(echo.data(), echo_len);
        if (!in) throw IoError(IoErrorKind::CorruptPayload, "truncated config echo in " + path);
    }
    std::uint64_t seed = 0;
    take(in, seed, path);
    char probe;
    if (in.read(&probe, 1))
        throw IoError(IoErrorKind::CorruptPayload, "trailing bytes in " + path);
    try {
        stack.validate();
    } catch (const std::invalid_argument& e) {
        throw IoError(IoErrorKind::CorruptPayload, std::string(e.what()) + " in " + path);
    }
    if (info) {
        info->config_echo = std::move(echo);
        info->seed = seed;
    }
    return stack;
}

}  // namespace gshider
