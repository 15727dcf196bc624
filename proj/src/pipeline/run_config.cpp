#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "aasn/losses.hpp"
#include "aasn/run_config.hpp"

namespace aasn {

namespace {

namespace pt = boost::property_tree;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename Int>
Int parse_integer(std::string_view key, std::string_view value) {
    Int out{};
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw ConfigError("config: '" + std::string(key) + "' expects an integer, got '" + std::string(value) + "'");
    }
    return out;
}

double parse_real(std::string_view key, std::string_view value) {
    double out = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw ConfigError("config: '" + std::string(key) + "' expects a number, got '" + std::string(value) + "'");
    }
    return out;
}

bool parse_flag(std::string_view key, std::string_view value) {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw ConfigError("config: '" + std::string(key) + "' expects a boolean, got '" + std::string(value) + "'");
}

struct Field {
    std::string_view section;
    std::string_view key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view qualified, std::string_view value)> set;
};

template <typename Member>
Field int_field(std::string_view section, std::string_view key, Member member) {
    return {section, key, [member](const RunConfig& c) { return std::to_string(member(c)); },
            [member](RunConfig& c, std::string_view q, std::string_view v) {
                auto& slot = member(c);
                slot = parse_integer<std::remove_reference_t<decltype(slot)>>(q, v);
            }};
}

template <typename Member>
Field real_field(std::string_view section, std::string_view key, Member member) {
    return {section, key, [member](const RunConfig& c) { return format_double(member(c)); },
            [member](RunConfig& c, std::string_view q, std::string_view v) { member(c) = parse_real(q, v); }};
}

const std::vector<Field>& fields() {
    using model::parse_align;
    using model::parse_contrastive;
    using model::parse_fusion;
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        // [data]
        f.push_back(int_field("data", "seed", [](auto& c) -> auto& { return c.data.phantom.seed; }));
        f.push_back(int_field("data", "image_h", [](auto& c) -> auto& { return c.data.phantom.image_h; }));
        f.push_back(int_field("data", "image_w", [](auto& c) -> auto& { return c.data.phantom.image_w; }));
        f.push_back(int_field("data", "n_images", [](auto& c) -> auto& { return c.data.phantom.n_images; }));
        f.push_back(real_field("data", "lesion_prob", [](auto& c) -> auto& { return c.data.phantom.lesion_prob; }));
        f.push_back(int_field("data", "max_lesions", [](auto& c) -> auto& { return c.data.phantom.max_lesions; }));
        f.push_back(real_field("data", "pose_magnitude",
                               [](auto& c) -> auto& { return c.data.phantom.pose_magnitude; }));
        f.push_back(real_field("data", "nuisance_magnitude",
                               [](auto& c) -> auto& { return c.data.phantom.nuisance_magnitude; }));
        f.push_back(real_field("data", "lesion_contrast",
                               [](auto& c) -> auto& { return c.data.phantom.lesion_contrast; }));
        f.push_back(real_field("data", "lesion_width_px",
                               [](auto& c) -> auto& { return c.data.phantom.lesion_width_px; }));
        f.push_back(real_field("data", "noise_sigma", [](auto& c) -> auto& { return c.data.phantom.noise_sigma; }));
        f.push_back(int_field("data", "max_variants", [](auto& c) -> auto& { return c.data.phantom.max_variants; }));
        f.push_back(real_field("data", "train_fraction", [](auto& c) -> auto& { return c.data.split[0]; }));
        f.push_back(real_field("data", "val_fraction", [](auto& c) -> auto& { return c.data.split[1]; }));
        f.push_back(real_field("data", "test_fraction", [](auto& c) -> auto& { return c.data.split[2]; }));
        f.push_back(int_field("data", "split_seed", [](auto& c) -> auto& { return c.data.split_seed; }));
        f.push_back(real_field("data", "roi_margin", [](auto& c) -> auto& { return c.data.roi_margin; }));
        f.push_back(real_field("data", "lambda_tps", [](auto& c) -> auto& { return c.data.lambda_tps; }));
        f.push_back(real_field("data", "landmark_noise_px", [](auto& c) -> auto& { return c.data.landmark_noise_px; }));
        f.push_back({"data", "dir", [](const RunConfig& c) { return c.data.dir.string(); },
                     [](RunConfig& c, std::string_view, std::string_view v) { c.data.dir = std::string(v); }});
        // [model]
        f.push_back(int_field("model", "base_channels", [](auto& c) -> auto& { return c.model.base_channels; }));
        f.push_back(int_field("model", "blocks_before_split",
                              [](auto& c) -> auto& { return c.model.blocks_before_split; }));
        f.push_back(int_field("model", "blocks_after_split",
                              [](auto& c) -> auto& { return c.model.blocks_after_split; }));
        f.push_back({"model", "fusion", [](const RunConfig& c) { return std::string(to_string(c.model.fusion)); },
                     [](RunConfig& c, std::string_view, std::string_view v) { c.model.fusion = parse_fusion(v); }});
        f.push_back({"model", "align", [](const RunConfig& c) { return std::string(to_string(c.model.align)); },
                     [](RunConfig& c, std::string_view, std::string_view v) { c.model.align = parse_align(v); }});
        f.push_back({"model", "contrastive",
                     [](const RunConfig& c) { return std::string(to_string(c.model.contrastive)); },
                     [](RunConfig& c, std::string_view, std::string_view v) {
                         c.model.contrastive = parse_contrastive(v);
                     }});
        f.push_back(int_field("model", "proj_dim", [](auto& c) -> auto& { return c.model.proj_dim; }));
        f.push_back(int_field("model", "input_h", [](auto& c) -> auto& { return c.model.input_h; }));
        f.push_back(int_field("model", "input_w", [](auto& c) -> auto& { return c.model.input_w; }));
        f.push_back(int_field("model", "output_stride", [](auto& c) -> auto& { return c.model.output_stride; }));
        f.push_back({"model", "linear_probe", [](const RunConfig& c) { return std::string(c.model.linear_probe ? "1" : "0"); },
                     [](RunConfig& c, std::string_view q, std::string_view v) { c.model.linear_probe = parse_flag(q, v); }});
        // [loss]
        f.push_back(real_field("loss", "weight", [](auto& c) -> auto& { return c.loss.weight; }));
        f.push_back(real_field("loss", "margin", [](auto& c) -> auto& { return c.loss.margin; }));
        f.push_back(int_field("loss", "dilation_radius", [](auto& c) -> auto& { return c.loss.dilation_radius; }));
        // [train]
        f.push_back(int_field("train", "epochs", [](auto& c) -> auto& { return c.train.epochs; }));
        f.push_back(int_field("train", "batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
        f.push_back(real_field("train", "lr", [](auto& c) -> auto& { return c.train.lr; }));
        f.push_back(real_field("train", "beta1", [](auto& c) -> auto& { return c.train.beta1; }));
        f.push_back(real_field("train", "beta2", [](auto& c) -> auto& { return c.train.beta2; }));
        f.push_back(real_field("train", "eps", [](auto& c) -> auto& { return c.train.eps; }));
        f.push_back(int_field("train", "seed", [](auto& c) -> auto& { return c.train.seed; }));
        f.push_back({"train", "out_dir", [](const RunConfig& c) { return c.train.out_dir.string(); },
                     [](RunConfig& c, std::string_view, std::string_view v) { c.train.out_dir = std::string(v); }});
        // [eval]
        f.push_back({"eval", "split", [](const RunConfig& c) { return c.eval.split; },
                     [](RunConfig& c, std::string_view, std::string_view v) { c.eval.split = std::string(v); }});
        f.push_back(real_field("eval", "ambiguity_radius", [](auto& c) -> auto& { return c.eval.ambiguity_radius; }));
        return f;
    }();
    return table;
}

const Field& find_field(std::string_view section, std::string_view key) {
    for (const Field& f : fields()) {
        if (f.section == section && f.key == key) return f;
    }
    throw ConfigError("config: unknown key '" + std::string(section) + "." + std::string(key) + "'");
}

void set_field(RunConfig& c, std::string_view section, std::string_view key, std::string_view value) {
    const std::string qualified = std::string(section) + "." + std::string(key);
    find_field(section, key).set(c, qualified, value);
}

} // namespace

void RunConfig::validate() const {
    data.phantom.validate();
    double total = 0;
    for (double f : data.split) {
        if (!(f >= 0)) throw ConfigError("config: split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ConfigError("config: split fractions must sum to 1");
    if (!(data.roi_margin >= 0 && data.roi_margin < 1)) throw ConfigError("config: data.roi_margin must lie in [0, 1)");
    if (!(data.lambda_tps >= 0)) throw ConfigError("config: data.lambda_tps must be non-negative");
    if (!(data.landmark_noise_px >= 0)) throw ConfigError("config: data.landmark_noise_px must be non-negative");
    model.validate();
    if (!(loss.weight >= 0)) throw ConfigError("config: loss.weight must be non-negative");
    if (!(loss.margin > 0)) throw ConfigError("config: loss.margin must be positive");
    if (loss.dilation_radius < 0) throw ConfigError("config: loss.dilation_radius must be non-negative");
    if (train.epochs < 1) throw ConfigError("config: train.epochs must be positive");
    if (train.batch_size < 1) throw ConfigError("config: train.batch_size must be positive");
    if (!(train.lr > 0)) throw ConfigError("config: train.lr must be positive");
    if (!(train.beta1 >= 0 && train.beta1 < 1) || !(train.beta2 >= 0 && train.beta2 < 1)) {
        throw ConfigError("config: Adam betas must lie in [0, 1)");
    }
    if (!(train.eps > 0)) throw ConfigError("config: train.eps must be positive");
    if (eval.split != "train" && eval.split != "val" && eval.split != "test") {
        throw ConfigError("config: eval.split must be train, val or test");
    }
    if (!(eval.ambiguity_radius >= 0)) throw ConfigError("config: eval.ambiguity_radius must be non-negative");
}

int RunConfig::dilation_radius() const {
    return loss.dilation_radius > 0 ? loss.dilation_radius : losses::scaled_dilation_radius(model.input_h);
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    std::string_view section;
    for (const Field& f : fields()) {
        if (f.section != section) {
            if (!section.empty()) out << '\n';
            section = f.section;
            out << '[' << section << "]\n";
        }
        out << f.key << " = " << f.get(*this) << '\n';
    }
    return out.str();
}

RunConfig RunConfig::from_text(std::string_view text) {
    pt::ptree tree;
    std::istringstream in{std::string(text)};
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
        for (const auto& [key, value] : body) set_field(c, section, key, value.data());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return from_text(text.str());
}

void RunConfig::apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
        throw ConfigError("config: override must look like section.key=value, got '" + std::string(assignment) + "'");
    }
    set_field(*this, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
}

std::span<const std::string_view> variant_names() {
    static constexpr std::array<std::string_view, 6> names{"baseline", "ff", "ff_fa", "full", "ff_fa_cl", "no_proj"};
    return names;
}

void RunConfig::apply_variant(std::string_view name) {
    using model::Align;
    using model::Contrastive;
    using model::Fusion;
    if (name == "baseline") {
        model.fusion = Fusion::none;
        model.align = Align::feature;
        model.contrastive = Contrastive::off;
    } else if (name == "ff") {
        model.fusion = Fusion::inside_transition;
        model.align = Align::image;
        model.contrastive = Contrastive::off;
    } else if (name == "ff_fa") {
        model.fusion = Fusion::inside_transition;
        model.align = Align::feature;
        model.contrastive = Contrastive::off;
    } else if (name == "full" || name == "ff_fa_cl") {
        model.fusion = Fusion::inside_transition;
        model.align = Align::feature;
        model.contrastive = Contrastive::on_with_projection;
    } else if (name == "no_proj") {
        model.fusion = Fusion::inside_transition;
        model.align = Align::feature;
        model.contrastive = Contrastive::on_no_projection;
    } else {
        throw ConfigError("config: unknown variant '" + std::string(name) + "'");
    }
}

bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_text() == b.to_text(); }

} // namespace aasn
