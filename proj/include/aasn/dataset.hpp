#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "aasn/geometry.hpp"
#include "aasn/run_config.hpp"
#include "aasn/synth.hpp"

namespace aasn::pipeline {

using geometry::Point;

// On-disk layout written by generate_dataset:
//
//   <dir>/manifest.json           config, labels, split and cached geometry
//   <dir>/images/NNNNN.png        full phantom, 8-bit gray
//   <dir>/landmarks/NNNNN.txt     16 named landmarks, image pixels
//   <dir>/annotations/NNNNN.txt   fracture centres, ROI pixels
struct ManifestEntry {
    int index = 0;
    int label = 0;
    std::string split;                // train, val or test
    std::vector<Point> lesions;       // image pixels
    geometry::MirrorFrames frames;    // cached ROI pair
    geometry::TpsWarp warp;           // cached, original ROI -> flipped ROI
};

struct Manifest {
    std::string config_text;  // the RunConfig that generated the data
    int roi_h = 0;
    int roi_w = 0;
    std::vector<ManifestEntry> entries;

    [[nodiscard]] std::vector<int> indices(std::string_view split) const;
};

[[nodiscard]] std::string image_name(int index);

// Generates the phantoms, splits them and caches the per-image geometry.
// Throws ConfigError if the directory already holds a manifest and `force`
// is false, or if the split is impossible.
Manifest generate_dataset(const RunConfig& config, bool force);

// Throws LoadError when the manifest is missing or malformed.
[[nodiscard]] Manifest read_manifest(const std::filesystem::path& dir);

// One ROI pair ready for the network. Tensors are 1 x C x H x W.
struct PreparedSample {
    int index = 0;
    int label = 0;
    Tensor image;            // I
    Tensor flipped;          // I_f, read directly through the reflection
    Tensor flipped_warped;   // I_f resampled into the frame of I
    Tensor grid;             // feature-level warp, 1 x 2 x feature dims
    Tensor mask;             // M at the output stride
    Tensor contrast_mask;    // M-hat at the feature stride
    std::vector<Point> points;  // fracture centres, ROI pixels
};

struct PreparedDataset {
    std::vector<PreparedSample> train;
    std::vector<PreparedSample> val;
    std::vector<PreparedSample> test;

    // Throws ConfigError for names other than train, val and test.
    [[nodiscard]] const std::vector<PreparedSample>& part(std::string_view split) const;
};

[[nodiscard]] PreparedSample prepare_sample(const Tensor& image, const ManifestEntry& entry, const RunConfig& config);

// Reads config.data.dir and prepares the samples for config.model: all of
// them, or only those of split `only` when it is non-empty.
[[nodiscard]] PreparedDataset prepare_dataset(const RunConfig& config, std::string_view only = {});

} // namespace aasn::pipeline
