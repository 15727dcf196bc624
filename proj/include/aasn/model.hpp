#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aasn/ops.hpp"
#include "aasn/optim.hpp"

namespace aasn::model {

// Where the two streams are concatenated relative to the transition that
// follows the split point.
enum class Fusion { none, before_transition, after_transition, inside_transition };
// image: the mirrored ROI is warped before encoding; feature: its features
// are resampled with the warp grid after encoding.
enum class Align { image, feature };
enum class Contrastive { off, on_no_projection, on_with_projection };

[[nodiscard]] std::string_view to_string(Fusion f);
[[nodiscard]] std::string_view to_string(Align a);
[[nodiscard]] std::string_view to_string(Contrastive c);
// Throw ConfigError on unknown names.
[[nodiscard]] Fusion parse_fusion(std::string_view s);
[[nodiscard]] Align parse_align(std::string_view s);
[[nodiscard]] Contrastive parse_contrastive(std::string_view s);

struct ModelConfig {
    int base_channels = 8;
    int blocks_before_split = 3;
    int blocks_after_split = 1;
    Fusion fusion = Fusion::inside_transition;
    Align align = Align::feature;
    Contrastive contrastive = Contrastive::on_with_projection;
    int proj_dim = 0;  // 0: same width as the encoder output
    int input_h = 64;
    int input_w = 128;
    int output_stride = 4;
    // Replaces every encoder block with a bare 2x2 average pool on the single
    // input channel. Only useful for tests that need a linear encoder.
    bool linear_probe = false;

    // Throws ConfigError describing the first violated constraint.
    void validate() const;

    [[nodiscard]] int feature_channels() const;
    [[nodiscard]] int feature_stride() const { return 1 << blocks_before_split; }
    [[nodiscard]] int decoder_stride() const { return 1 << (blocks_before_split + blocks_after_split); }
    [[nodiscard]] int output_h() const { return input_h / output_stride; }
    [[nodiscard]] int output_w() const { return input_w / output_stride; }
    [[nodiscard]] int projection_channels() const { return proj_dim > 0 ? proj_dim : feature_channels(); }
    [[nodiscard]] bool two_streams() const { return fusion != Fusion::none; }

    // "key = value" lines; from_text rejects unknown keys.
    [[nodiscard]] std::string to_text() const;
    [[nodiscard]] static ModelConfig from_text(std::string_view text);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct BasicForwardResult {
    BasicTensor<T> logits;           // N x 1 x output_h x output_w
    BasicTensor<T> prob;             // sigmoid(logits)
    BasicTensor<T> features;         // F
    BasicTensor<T> flipped_aligned;  // F'_f; undefined for a single stream
};

template <typename T>
class BasicAasnModel {
public:
    BasicAasnModel(const ModelConfig& config, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    void set_mode(Mode mode) noexcept { mode_ = mode; }
    [[nodiscard]] Mode mode() const noexcept { return mode_; }

    // N x 1 x input_h x input_w -> N x C x (input / feature_stride).
    [[nodiscard]] BasicTensor<T> encode(const BasicTensor<T>& roi);

    // Pass `flipped_aligned` = nullptr for the single-stream configuration.
    [[nodiscard]] BasicTensor<T> fuse_and_decode(const BasicTensor<T>& features, const BasicTensor<T>* flipped_aligned);

    // Under align=feature `grid` (N x 2 x feature dims) is required; under
    // align=image `flipped` must already be warped and `grid` is ignored.
    [[nodiscard]] BasicForwardResult<T> forward(const BasicTensor<T>& image, const BasicTensor<T>& flipped,
                                                const BasicTensor<T>* grid);

    // Shared 1x1 linear -> BN -> ReLU head. ContractError unless the
    // configuration enables the projection.
    [[nodiscard]] BasicTensor<T> project(const BasicTensor<T>& features);

    // Handles alias the model's storage: optimizer updates land in the model.
    [[nodiscard]] NamedTensors<T> parameters() const;
    // Batch-norm running statistics.
    [[nodiscard]] NamedTensors<T> buffers() const;

    // `attachment` is opaque text stored after the model header (the run
    // configuration, for instance) and handed back by load.
    void save(const std::filesystem::path& path, std::string_view attachment = {}) const;
    // Throws LoadError on format problems, unknown or missing entries and
    // shape mismatches; nothing is returned on failure.
    [[nodiscard]] static BasicAasnModel load(const std::filesystem::path& path, std::string* attachment = nullptr);

private:
    struct ConvBn {
        BasicTensor<T> weight;
        BasicTensor<T> gamma;
        BasicTensor<T> beta;
        BasicBatchNormState<T> state;
    };
    struct Block {
        ConvBn first;
        ConvBn second;
    };
    // BN -> ReLU -> 1x1 conv, then a 2x2 average pool.
    struct Transition {
        BasicTensor<T> gamma;
        BasicTensor<T> beta;
        BasicBatchNormState<T> state;
        BasicTensor<T> weight;
    };
    struct ProjectionHead {
        BasicTensor<T> weight;
        BasicTensor<T> gamma;
        BasicTensor<T> beta;
        BasicBatchNormState<T> state;
    };

    BasicTensor<T> run(ConvBn& layer, const BasicTensor<T>& x);
    BasicTensor<T> run(Block& block, const BasicTensor<T>& x);
    BasicTensor<T> normalize(Transition& t, const BasicTensor<T>& x);
    BasicTensor<T> finish(Transition& t, const BasicTensor<T>& x);

    template <typename Visit>
    void visit(Visit&& visit) const;

    ModelConfig config_;
    Mode mode_ = Mode::train;
    std::vector<Block> encoder_;
    Transition transition_;
    std::vector<Block> decoder_;
    BasicTensor<T> head_weight_;
    BasicTensor<T> head_bias_;
    std::optional<ProjectionHead> projection_;
};

using AasnModel = BasicAasnModel<float>;
using ForwardResult = BasicForwardResult<float>;

} // namespace aasn::model
