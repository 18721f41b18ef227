#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gshider/dataset.hpp"
#include "gshider/decoders.hpp"
#include "gshider/scene_model.hpp"

namespace gshider {

enum class IoErrorKind {
    MissingFile,
    MalformedHeader,
    PropertyMismatch,
    HeaderMismatch,
    TruncatedBody,
    VersionMismatch,
    CorruptPayload,
    BadImage,
    BadManifest,
};

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    IoErrorKind kind() const { return kind_; }

private:
    IoErrorKind kind_;
};

/// Binary little-endian PLY with per-vertex float32 properties:
///   feature mode: x y z f_feat_0..M-1 opacity scale_0..2 rot_0..3
///   sh modes:     x y z f_dc_0..2 f_rest_0..44 [second set suffixed _h2]
///                 opacity scale_0..2 rot_0..3
/// Header comments carry gshider_mode and gshider_M; round-trips are
/// bit-exact.
void write_ply(const GaussianCloud& cloud, const std::string& path);
GaussianCloud read_ply(const std::string& path);

/// 8-bit RGB PNG; stored value v maps to v / 255, saving rounds half up.
FeatureImage load_image(const std::string& path);
void save_image(const FeatureImage& image, const std::string& path);

/// JSON camera/dataset manifest: shared intrinsics, per-frame camera-to-world
/// matrices, original-image paths, optional hidden-image paths (one or L per
/// frame), optional designated hidden view for image mode.
struct TransformsManifest {
    int width = 0, height = 0;
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    double near = 0.01, far = 100.0;
    struct Frame {
        Mat3 rotation;  // camera-to-world
        Vec3 origin;
        std::string image_path;
        std::vector<std::string> hidden_paths;
    };
    std::vector<Frame> frames;
    int designated_view = -1;
};

TransformsManifest read_manifest(const std::string& path);
void write_manifest(const TransformsManifest& manifest, const std::string& path);

/// Loads every referenced image; paths resolve relative to the manifest.
PairedDataset load_dataset(const TransformsManifest& manifest,
                           const std::string& manifest_dir);

/// Binary decoder checkpoint: magic, version, topology (channel counts and
/// final activation), float32 weights and biases in layer order, a config
/// echo string, and the seed. Round-trips bit-exact.
void write_checkpoint(const ConvStack& stack, const std::string& path,
                      const std::string& config_echo = "", std::uint64_t seed = 0);
struct CheckpointInfo {
    std::string config_echo;
    std::uint64_t seed = 0;
};
ConvStack read_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

}  // namespace gshider
