#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "aasn/model.hpp"
#include "aasn/synth.hpp"

namespace aasn {

struct DataConfig {
    synth::PhantomSpec phantom;
    std::array<double, 3> split{8.0 / 11, 1.0 / 11, 2.0 / 11};  // train, val, test
    std::uint64_t split_seed = 0;
    double roi_margin = 0.1;
    double lambda_tps = 1e-3;
    // Gaussian error (px, per coordinate) added to the landmarks a dataset
    // ships with, standing in for a landmark detector. Images, lesions and
    // labels are unaffected; only the geometry derived from landmarks is.
    double landmark_noise_px = 2;
    std::filesystem::path dir = "data";
};

struct LossConfig {
    double weight = 0.5;      // contrastive term in the total loss
    double margin = 0.5;
    int dilation_radius = 0;  // 0: scaled to the ROI height
};

struct TrainConfig {
    int epochs = 8;
    int batch_size = 16;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "runs/default";
};

struct EvalConfig {
    std::string split = "test";
    double ambiguity_radius = 12;  // ROI pixels
};

// Every knob of a run. Serialized as INI text ([data] [model] [loss] [train]
// [eval]) into checkpoints and reports, so a run can be repeated from any
// artifact it produced.
struct RunConfig {
    DataConfig data;
    model::ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    EvalConfig eval;

    // Throws ConfigError for the first invalid field.
    void validate() const;

    [[nodiscard]] int dilation_radius() const;

    [[nodiscard]] std::string to_text() const;
    // Missing keys keep their defaults; unknown sections or keys are errors.
    [[nodiscard]] static RunConfig from_text(std::string_view text);
    [[nodiscard]] static RunConfig from_file(const std::filesystem::path& path);

    // "section.key=value".
    void apply_override(std::string_view assignment);
    // baseline, ff, ff_fa, full (= ff_fa_cl) or no_proj.
    void apply_variant(std::string_view name);

    friend bool operator==(const RunConfig&, const RunConfig&);
};

[[nodiscard]] std::span<const std::string_view> variant_names();

} // namespace aasn
