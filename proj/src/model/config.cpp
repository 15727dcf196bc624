#include <array>
#include <charconv>
#include <sstream>

#include "aasn/model.hpp"

namespace aasn::model {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
    for (const auto& [name, value] : table) {
        if (name == s) return value;
    }
    std::string msg = std::string("unknown ") + what + " '" + std::string(s) + "' (expected one of:";
    for (const auto& entry : table) msg += " " + std::string(entry.first);
    throw ConfigError(msg + ")");
}

constexpr std::array<std::pair<std::string_view, Fusion>, 4> kFusion{{
    {"none", Fusion::none},
    {"before_transition", Fusion::before_transition},
    {"after_transition", Fusion::after_transition},
    {"inside_transition", Fusion::inside_transition},
}};
constexpr std::array<std::pair<std::string_view, Align>, 2> kAlign{{
    {"image", Align::image},
    {"feature", Align::feature},
}};
constexpr std::array<std::pair<std::string_view, Contrastive>, 3> kContrastive{{
    {"off", Contrastive::off},
    {"on_no_projection", Contrastive::on_no_projection},
    {"on_with_projection", Contrastive::on_with_projection},
}};

template <typename E, std::size_t N>
std::string_view name_of(E value, const std::array<std::pair<std::string_view, E>, N>& table) {
    for (const auto& [name, v] : table) {
        if (v == value) return name;
    }
    return "?";
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

int parse_int(std::string_view key, std::string_view value) {
    int out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("model config: '" + std::string(key) + "' expects an integer, got '" + std::string(value) + "'");
    }
    return out;
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

} // namespace

std::string_view to_string(Fusion f) { return name_of(f, kFusion); }
std::string_view to_string(Align a) { return name_of(a, kAlign); }
std::string_view to_string(Contrastive c) { return name_of(c, kContrastive); }
Fusion parse_fusion(std::string_view s) { return parse_enum(s, kFusion, "fusion"); }
Align parse_align(std::string_view s) { return parse_enum(s, kAlign, "align"); }
Contrastive parse_contrastive(std::string_view s) { return parse_enum(s, kContrastive, "contrastive mode"); }

int ModelConfig::feature_channels() const {
    return linear_probe ? 1 : base_channels << (blocks_before_split - 1);
}

void ModelConfig::validate() const {
    if (base_channels < 1) throw ConfigError("model config: base_channels must be positive");
    if (blocks_before_split < 1 || blocks_before_split > 6) {
        throw ConfigError("model config: blocks_before_split must be in [1, 6]");
    }
    if (blocks_after_split < 1 || blocks_after_split > 4) {
        throw ConfigError("model config: blocks_after_split must be in [1, 4]");
    }
    const int stride = decoder_stride();
    if (input_h < stride || input_w < stride || input_h % stride != 0 || input_w % stride != 0) {
        throw ConfigError("model config: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " is not divisible by the decoder stride " + std::to_string(stride));
    }
    if (!is_power_of_two(output_stride) || output_stride > stride) {
        throw ConfigError("model config: output_stride must be a power of two no larger than " +
                          std::to_string(stride));
    }
    if (proj_dim < 0) throw ConfigError("model config: proj_dim must be non-negative");
    if (contrastive != Contrastive::off && fusion == Fusion::none) {
        throw ConfigError("model config: the contrastive loss needs the mirrored stream (fusion must not be none)");
    }
}

std::string ModelConfig::to_text() const {
    std::ostringstream out;
    out << "base_channels = " << base_channels << '\n'
        << "blocks_before_split = " << blocks_before_split << '\n'
        << "blocks_after_split = " << blocks_after_split << '\n'
        << "fusion = " << to_string(fusion) << '\n'
        << "align = " << to_string(align) << '\n'
        << "contrastive = " << to_string(contrastive) << '\n'
        << "proj_dim = " << proj_dim << '\n'
        << "input_h = " << input_h << '\n'
        << "input_w = " << input_w << '\n'
        << "output_stride = " << output_stride << '\n'
        << "linear_probe = " << (linear_probe ? 1 : 0) << '\n';
    return out.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
    ModelConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const std::string_view body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw ConfigError("model config: expected 'key = value', got '" + line + "'");
        const std::string_view key = trim(body.substr(0, eq));
        const std::string_view value = trim(body.substr(eq + 1));
        if (key == "base_channels") c.base_channels = parse_int(key, value);
        else if (key == "blocks_before_split") c.blocks_before_split = parse_int(key, value);
        else if (key == "blocks_after_split") c.blocks_after_split = parse_int(key, value);
        else if (key == "fusion") c.fusion = parse_fusion(value);
        else if (key == "align") c.align = parse_align(value);
        else if (key == "contrastive") c.contrastive = parse_contrastive(value);
        else if (key == "proj_dim") c.proj_dim = parse_int(key, value);
        else if (key == "input_h") c.input_h = parse_int(key, value);
        else if (key == "input_w") c.input_w = parse_int(key, value);
        else if (key == "output_stride") c.output_stride = parse_int(key, value);
        else if (key == "linear_probe") c.linear_probe = parse_int(key, value) != 0;
        else throw ConfigError("model config: unknown key '" + std::string(key) + "'");
    }
    c.validate();
    return c;
}

} // namespace aasn::model
