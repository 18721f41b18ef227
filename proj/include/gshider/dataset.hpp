#pragma once

#include <vector>

#include "gshider/camera.hpp"
#include "gshider/rasterizer.hpp"

namespace gshider {

struct DatasetEntry {
    Camera camera;
    FeatureImage image;                // ground-truth view, H x W x 3 in [0,1]
    std::vector<FeatureImage> hidden;  // 0, 1 or L hidden targets per view
};

/// Training views with one-to-one original/hidden correspondence. The last
/// eighth of the views is reserved as the held-out metric split.
struct PairedDataset {
    std::vector<DatasetEntry> entries;
    int designated_view = -1;  // image-hiding mode: the only view carrying a target
    /// Optional initialization points (synthetic datasets provide them);
    /// when empty the trainer samples uniformly in the camera-visible box.
    std::vector<SeedPoint> seeds;

    std::size_t size() const { return entries.size(); }

    /// Number of views used for optimization (the rest are held out).
    std::size_t train_count() const {
        std::size_t held = entries.size() / 8;
        return entries.size() - held;
    }

    /// Number of hidden streams (L); 0 when no entry carries hidden images.
    int hidden_streams() const {
        for (const auto& e : entries)
            if (!e.hidden.empty()) return static_cast<int>(e.hidden.size());
        return 0;
    }

    void validate() const;  // throws std::invalid_argument
};

}  // namespace gshider
