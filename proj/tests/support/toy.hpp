#pragma once

#include <cstdint>
#include <vector>

#include "gshider/dataset.hpp"
#include "gshider/scene_model.hpp"

namespace gshider::testsupport {

/// Inward-looking cameras on an orbit of the origin with varying elevation.
std::vector<Camera> make_orbit_cameras(int count, int width, int height,
                                       double radius = 3.5);

/// A procedural scene: soft colored blobs (an SH cloud with DC-only colors)
/// inside the unit box.
GaussianCloud make_blob_cloud(std::uint64_t seed, int blobs = 60);

/// Points sampled from the generator cloud with its colors; stands in for
/// the sparse reconstruction points a real capture would provide.
std::vector<SeedPoint> sample_seed_points(const GaussianCloud& generator,
                                          int per_gaussian, std::uint64_t seed);

/// Renders the generator cloud at each camera (black background).
std::vector<FeatureImage> render_views(const GaussianCloud& generator,
                                       const std::vector<Camera>& cameras,
                                       int threads = 1);

struct ToyDatasetSpec {
    int views = 16;
    int size = 64;  // square images
    std::uint64_t scene_seed = 11;
    std::uint64_t hidden_seed = 23;
    std::uint64_t hidden_seed2 = 37;  // second stream for multi-scene
    int hidden_streams = 1;           // 0 = original only
    int seeds_per_gaussian = 12;
    bool seed_from_hidden = true;  // union seed points from both scenes
    int designated_view = -1;      // image mode: hide make_smooth_image here
    int threads = 1;
};

/// Original + hidden paired views rendered from procedural clouds, with
/// seed points for initialization. In image mode (designated_view >= 0) the
/// single hidden target is a smooth procedural image at that view.
PairedDataset make_toy_dataset(const ToyDatasetSpec& spec);

/// Smooth low-frequency RGB image in [0.05, 0.95].
FeatureImage make_smooth_image(std::uint64_t seed, int height, int width);

/// Small random feature cloud in front of a default camera; for rasterizer
/// and gradient tests.
struct RandomSceneSpec {
    std::size_t gaussians = 100;
    int feature_dim = 8;
    std::uint64_t seed = 1;
    double opacity_lo = 0.1, opacity_hi = 0.9;
};
GaussianCloud make_random_cloud(const RandomSceneSpec& spec);

/// Camera at the origin looking down +z with the scene box centered at z=3.
Camera make_test_camera(int width, int height, double fx_scale = 1.2);

}  // namespace gshider::testsupport
