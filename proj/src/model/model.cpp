#include <cmath>
#include <random>
#include <set>

#include "aasn/checkpoint.hpp"
#include "aasn/model.hpp"

namespace aasn::model {

namespace {

constexpr std::string_view kHeaderTag = "aasn-model 1\n";
constexpr std::string_view kAttachmentSeparator = "\n---\n";

template <typename T>
BasicTensor<T> kaiming(Shape shape, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    BasicTensor<T> w(shape);
    for (T& v : w.data()) v = static_cast<T>(dist(rng));
    return w.set_requires_grad();
}

template <typename T>
BasicTensor<T> param(Shape shape, T fill) {
    BasicTensor<T> t(shape, fill);
    return t.set_requires_grad();
}

} // namespace

template <typename T>
BasicAasnModel<T>::BasicAasnModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    auto conv_bn = [&](int cin, int cout) {
        return ConvBn{kaiming<T>({cout, cin, 3, 3}, rng), param<T>({1, cout, 1, 1}, T(1)),
                      param<T>({1, cout, 1, 1}, T(0)), BasicBatchNormState<T>::make(cout)};
    };
    auto block = [&](int cin, int cout) {
        Block b{conv_bn(cin, cout), {}};
        b.second = conv_bn(cout, cout);
        return b;
    };
    if (!config_.linear_probe) {
        int cin = 1;
        for (int k = 0; k < config_.blocks_before_split; ++k) {
            const int cout = config_.base_channels << k;
            encoder_.push_back(block(cin, cout));
            cin = cout;
        }
    }
    const int c = config_.feature_channels();
    const bool concat_first = config_.fusion == Fusion::before_transition;
    const bool concat_inside = config_.fusion == Fusion::inside_transition;
    const int bn_channels = concat_first ? 2 * c : c;
    const int conv_in = (concat_first || concat_inside) ? 2 * c : c;
    transition_ = Transition{param<T>({1, bn_channels, 1, 1}, T(1)), param<T>({1, bn_channels, 1, 1}, T(0)),
                             BasicBatchNormState<T>::make(bn_channels), kaiming<T>({c, conv_in, 1, 1}, rng)};
    for (int k = 0; k < config_.blocks_after_split; ++k) {
        const int cin = (k == 0 && config_.fusion == Fusion::after_transition) ? 2 * c : c;
        decoder_.push_back(block(cin, c));
    }
    head_weight_ = kaiming<T>({1, c, 1, 1}, rng);
    head_bias_ = param<T>({1, 1, 1, 1}, T(0));
    if (config_.contrastive == Contrastive::on_with_projection) {
        const int p = config_.projection_channels();
        projection_ = ProjectionHead{kaiming<T>({p, c, 1, 1}, rng), param<T>({1, p, 1, 1}, T(1)),
                                     param<T>({1, p, 1, 1}, T(0)), BasicBatchNormState<T>::make(p)};
    }
}

template <typename T>
BasicTensor<T> BasicAasnModel<T>::run(ConvBn& layer, const BasicTensor<T>& x) {
    return relu(batchnorm2d(conv2d(x, layer.weight, BasicTensor<T>{}, 1, 1), layer.gamma, layer.beta, layer.state,
                            mode_));
}

template <typename T>
BasicTensor<T> BasicAasnModel<T>::run(Block& block, const BasicTensor<T>& x) {
    return run(block.second, run(block.first, x));
}

template <typename T>
BasicTensor<T> BasicAasnModel<T>::normalize(Transition& t, const BasicTensor<T>& x) {
    return relu(batchnorm2d(x, t.gamma, t.beta, t.state, mode_));
}

template <typename T>
BasicTensor<T> BasicAasnModel<T>::finish(Transition& t, const BasicTensor<T>& x) {
    return avgpool2x2(conv2d(x, t.weight, BasicTensor<T>{}));
}

template <typename T>
BasicTensor<T> BasicAasnModel<T>::encode(const BasicTensor<T>& roi) {
    const Shape& s = roi.shape();
    if (s.c != 1 || s.h != config_.input_h || s.w != config_.input_w) {
        throw DimensionError("encode: expected N x 1 x " + std::to_string(config_.input_h) + " x " +
                             std::to_string(config_.input_w) + ", got " + s.str());
    }
    BasicTensor<T> x = roi;
    if (config_.linear_probe) {
        for (int k = 0; k < config_.blocks_before_split; ++k) x = avgpool2x2(x);
        return x;
    }
    for (Block& b : encoder_) x = avgpool2x2(run(b, x));
    return x;
}

template <typename T>
BasicTensor<T> BasicAasnModel<T>::fuse_and_decode(const BasicTensor<T>& features,
                                                  const BasicTensor<T>* flipped_aligned) {
    const bool two = config_.two_streams();
    if (two && (flipped_aligned == nullptr || !flipped_aligned->defined())) {
        throw ContractError("fuse_and_decode: fusion '" + std::string(to_string(config_.fusion)) +
                            "' needs the aligned mirrored features");
    }
    if (two && !(flipped_aligned->shape() == features.shape())) {
        throw DimensionError("fuse_and_decode: F is " + features.shape().str() + " but F'_f is " +
                             flipped_aligned->shape().str());
    }
    BasicTensor<T> x;
    switch (config_.fusion) {
    case Fusion::none:
        x = finish(transition_, normalize(transition_, features));
        break;
    case Fusion::before_transition:
        x = finish(transition_, normalize(transition_, concat_channels(features, *flipped_aligned)));
        break;
    case Fusion::inside_transition:
        x = finish(transition_, concat_channels(normalize(transition_, features),
                                                normalize(transition_, *flipped_aligned)));
        break;
    case Fusion::after_transition:
        x = concat_channels(finish(transition_, normalize(transition_, features)),
                            finish(transition_, normalize(transition_, *flipped_aligned)));
        break;
    }
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
        if (k > 0) x = avgpool2x2(x);
        x = run(decoder_[k], x);
    }
    x = conv2d(x, head_weight_, head_bias_);
    for (int s = config_.decoder_stride(); s > config_.output_stride; s /= 2) x = upsample_bilinear2x(x);
    return x;
}

template <typename T>
BasicForwardResult<T> BasicAasnModel<T>::forward(const BasicTensor<T>& image, const BasicTensor<T>& flipped,
                                                 const BasicTensor<T>* grid) {
    BasicForwardResult<T> out;
    out.features = encode(image);
    if (config_.two_streams()) {
        if (!flipped.defined()) throw ContractError("forward: the mirrored ROI is required for two streams");
        if (flipped.shape() != image.shape()) {
            throw DimensionError("forward: image " + image.shape().str() + " vs mirrored " + flipped.shape().str());
        }
        BasicTensor<T> ff = encode(flipped);
        if (config_.align == Align::feature) {
            if (grid == nullptr || !grid->defined()) {
                throw ContractError("forward: feature alignment needs a sampling grid");
            }
            ff = grid_sample_bilinear(ff, *grid);
        }
        out.flipped_aligned = ff;
        out.logits = fuse_and_decode(out.features, &out.flipped_aligned);
    } else {
        out.logits = fuse_and_decode(out.features, nullptr);
    }
    out.prob = sigmoid(out.logits);
    return out;
}

template <typename T>
BasicTensor<T> BasicAasnModel<T>::project(const BasicTensor<T>& features) {
    if (!projection_) {
        throw ContractError("project: the projection head is disabled (contrastive = " +
                            std::string(to_string(config_.contrastive)) + ")");
    }
    ProjectionHead& p = *projection_;
    return relu(batchnorm2d(linear_1x1(features, p.weight, BasicTensor<T>{}), p.gamma, p.beta, p.state, mode_));
}

template <typename T>
template <typename Visit>
void BasicAasnModel<T>::visit(Visit&& fn) const {
    auto conv_bn = [&](const std::string& prefix, const ConvBn& l) {
        fn(prefix + ".weight", l.weight, false);
        fn(prefix + ".bn.gamma", l.gamma, false);
        fn(prefix + ".bn.beta", l.beta, false);
        fn(prefix + ".bn.running_mean", l.state.running_mean, true);
        fn(prefix + ".bn.running_var", l.state.running_var, true);
    };
    auto blocks = [&](const std::string& prefix, const std::vector<Block>& list) {
        for (std::size_t k = 0; k < list.size(); ++k) {
            const std::string name = prefix + ".block" + std::to_string(k);
            conv_bn(name + ".conv1", list[k].first);
            conv_bn(name + ".conv2", list[k].second);
        }
    };
    blocks("encoder", encoder_);
    fn("transition.bn.gamma", transition_.gamma, false);
    fn("transition.bn.beta", transition_.beta, false);
    fn("transition.bn.running_mean", transition_.state.running_mean, true);
    fn("transition.bn.running_var", transition_.state.running_var, true);
    fn("transition.conv.weight", transition_.weight, false);
    blocks("decoder", decoder_);
    fn("head.weight", head_weight_, false);
    fn("head.bias", head_bias_, false);
    if (projection_) {
        fn("projection.weight", projection_->weight, false);
        fn("projection.bn.gamma", projection_->gamma, false);
        fn("projection.bn.beta", projection_->beta, false);
        fn("projection.bn.running_mean", projection_->state.running_mean, true);
        fn("projection.bn.running_var", projection_->state.running_var, true);
    }
}

template <typename T>
NamedTensors<T> BasicAasnModel<T>::parameters() const {
    NamedTensors<T> out;
    visit([&](const std::string& name, const BasicTensor<T>& t, bool buffer) {
        if (!buffer) out.emplace_back(name, t);
    });
    return out;
}

template <typename T>
NamedTensors<T> BasicAasnModel<T>::buffers() const {
    NamedTensors<T> out;
    visit([&](const std::string& name, const BasicTensor<T>& t, bool buffer) {
        if (buffer) out.emplace_back(name, t);
    });
    return out;
}

template <typename T>
void BasicAasnModel<T>::save(const std::filesystem::path& path, std::string_view attachment) const {
    TensorArchive archive;
    archive.header = std::string(kHeaderTag) + config_.to_text();
    if (!attachment.empty()) archive.header += std::string(kAttachmentSeparator) + std::string(attachment);
    visit([&](const std::string& name, const BasicTensor<T>& t, bool) {
        archive.entries.emplace_back(name, t.template cast<float>());
    });
    write_archive(path, archive);
}

template <typename T>
BasicAasnModel<T> BasicAasnModel<T>::load(const std::filesystem::path& path, std::string* attachment) {
    const TensorArchive archive = read_archive(path);
    if (!archive.header.starts_with(kHeaderTag)) {
        throw LoadError("load: " + path.string() + " is a tensor archive but not a model checkpoint");
    }
    ModelConfig config;
    try {
        std::string_view body = std::string_view(archive.header).substr(kHeaderTag.size());
        const std::size_t cut = body.find(kAttachmentSeparator);
        if (attachment != nullptr) {
            *attachment = cut == std::string_view::npos ? std::string() : std::string(body.substr(cut + kAttachmentSeparator.size()));
        }
        config = ModelConfig::from_text(body.substr(0, cut));
    } catch (const ConfigError& e) {
        throw LoadError("load: bad model header in " + path.string() + ": " + e.what());
    }
    BasicAasnModel model(config, 0);
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, t] : archive.entries) {
        if (!stored.emplace(name, &t).second) throw LoadError("load: duplicate entry '" + name + "'");
    }
    std::set<std::string> used;
    model.visit([&](const std::string& name, const BasicTensor<T>& t, bool) {
        const auto it = stored.find(name);
        if (it == stored.end()) throw LoadError("load: checkpoint has no entry for '" + name + "'");
        const Tensor& src = *it->second;
        if (src.shape() != t.shape()) {
            throw LoadError("load: '" + name + "' has shape " + src.shape().str() + ", expected " + t.shape().str());
        }
        BasicTensor<T> dst = t;
        for (std::size_t i = 0; i < src.numel(); ++i) dst.ptr()[i] = static_cast<T>(src.ptr()[i]);
        used.insert(name);
    });
    for (const auto& [name, t] : stored) {
        if (!used.contains(name)) throw LoadError("load: unknown parameter '" + name + "' in " + path.string());
    }
    return model;
}

template class BasicAasnModel<float>;
template class BasicAasnModel<double>;

} // namespace aasn::model
