#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "aasn/dataset.hpp"
#include "aasn/image_io.hpp"
#include "aasn/losses.hpp"
#include "json.hpp"

namespace aasn::pipeline {

namespace {

// The landmarks a detector would report for this phantom: the true ones plus
// independent Gaussian error, seeded per (phantom seed, index).
geometry::LandmarkSet detected_landmarks(const synth::PhantomSample& s, double sigma) {
    if (sigma == 0) return s.landmarks;
    std::seed_seq seq{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32),
                      static_cast<std::uint32_t>(s.index), 0x1a4du};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0, sigma);
    geometry::LandmarkSet out = s.landmarks;
    for (int i = 0; i < geometry::kLandmarkCount; ++i) out[i] = out[i] + Point{noise(rng), noise(rng)};
    return out;
}

using json = nlohmann::json;
namespace fs = std::filesystem;

json to_json(Point p) { return json::array({p.x, p.y}); }
Point point_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json to_json(const geometry::Roi& r) {
    return {{"x0", r.x0}, {"y0", r.y0}, {"x1", r.x1}, {"y1", r.y1}, {"out_h", r.out_h}, {"out_w", r.out_w}};
}
geometry::Roi roi_from(const json& j) {
    return {j.at("x0").get<double>(), j.at("y0").get<double>(), j.at("x1").get<double>(),
            j.at("y1").get<double>(), j.at("out_h").get<int>(),   j.at("out_w").get<int>()};
}

json to_json(const std::vector<Point>& pts) {
    json out = json::array();
    for (Point p : pts) out.push_back(to_json(p));
    return out;
}
std::vector<Point> points_from(const json& j) {
    std::vector<Point> out;
    for (const json& p : j) out.push_back(point_from(p));
    return out;
}

json to_json(const geometry::TpsWarp& w) {
    const auto& a = w.affine();
    return {{"lambda", w.lambda()},
            {"control", to_json(std::vector<Point>(w.control_points().begin(), w.control_points().end()))},
            {"weights", to_json(std::vector<Point>(w.weights().begin(), w.weights().end()))},
            {"affine", json::array({json::array({a[0][0], a[0][1], a[0][2]}), json::array({a[1][0], a[1][1], a[1][2]})})}};
}
geometry::TpsWarp warp_from(const json& j) {
    std::array<std::array<double, 3>, 2> affine{};
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c) affine[r][c] = j.at("affine").at(r).at(c).get<double>();
    return geometry::TpsWarp::from_coefficients(points_from(j.at("control")), affine, points_from(j.at("weights")),
                                                j.at("lambda").get<double>());
}

constexpr std::string_view kManifest = "manifest.json";

} // namespace

std::string image_name(int index) {
    std::ostringstream s;
    s << std::setw(5) << std::setfill('0') << index;
    return s.str();
}

std::vector<int> Manifest::indices(std::string_view split) const {
    std::vector<int> out;
    for (const ManifestEntry& e : entries) {
        if (e.split == split) out.push_back(e.index);
    }
    return out;
}

Manifest generate_dataset(const RunConfig& config, bool force) {
    config.validate();
    const fs::path& dir = config.data.dir;
    if (fs::exists(dir / kManifest) && !force) {
        throw ConfigError("gen-data: " + dir.string() + " already holds a dataset; pass --force to overwrite");
    }
    const synth::PhantomSpec& spec = config.data.phantom;
    // Split first so that bad fractions fail before anything is written.
    std::vector<synth::PhantomSample> samples = synth::generate(spec);
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label());
    const synth::Split split = synth::split_dataset(labels, config.data.split, config.data.split_seed);
    std::vector<std::string> part(samples.size());
    for (int i : split.train) part[static_cast<std::size_t>(i)] = "train";
    for (int i : split.val) part[static_cast<std::size_t>(i)] = "val";
    for (int i : split.test) part[static_cast<std::size_t>(i)] = "test";

    for (const char* sub : {"images", "landmarks", "annotations"}) fs::create_directories(dir / sub);

    Manifest manifest;
    manifest.config_text = config.to_text();
    manifest.roi_h = config.model.input_h;
    manifest.roi_w = config.model.input_w;
    json entries = json::array();
    for (const synth::PhantomSample& s : samples) {
        const std::string name = image_name(s.index);
        io::write_png_gray(dir / "images" / (name + ".png"), s.image);
        const geometry::LandmarkSet landmarks = detected_landmarks(s, config.data.landmark_noise_px);
        geometry::write_landmarks(dir / "landmarks" / (name + ".txt"), landmarks);
        const geometry::PairGeometry g =
            geometry::build_pair_geometry(landmarks, spec.image_h, spec.image_w, config.data.roi_margin,
                                          manifest.roi_h, manifest.roi_w, config.data.lambda_tps);
        std::vector<Point> roi_points;
        for (Point p : s.lesions) roi_points.push_back(g.frames.roi.to_roi(p));
        losses::write_annotations(dir / "annotations" / (name + ".txt"), roi_points);

        ManifestEntry e{s.index, s.label(), part[static_cast<std::size_t>(s.index)], s.lesions, g.frames, g.warp};
        entries.push_back({{"index", e.index},
                           {"label", e.label},
                           {"split", e.split},
                           {"lesions", to_json(e.lesions)},
                           {"line", {{"point", to_json(g.frames.line.point)}, {"direction", to_json(g.frames.line.direction)}}},
                           {"roi", to_json(g.frames.roi)},
                           {"roi_flipped", to_json(g.frames.roi_flipped)},
                           {"warp", to_json(g.warp)}});
        manifest.entries.push_back(std::move(e));
    }
    const json doc = {{"format", "aasn-dataset 1"},
                      {"config", manifest.config_text},
                      {"roi", {manifest.roi_h, manifest.roi_w}},
                      {"counts", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}}},
                      {"samples", entries}};
    std::ofstream out(dir / kManifest);
    out << doc.dump(1) << '\n';
    if (!out) throw Error("gen-data: failed writing " + (dir / kManifest).string());
    return manifest;
}

Manifest read_manifest(const fs::path& dir) {
    const fs::path path = dir / kManifest;
    std::ifstream in(path);
    if (!in) throw LoadError("dataset: no manifest at " + path.string());
    Manifest m;
    try {
        const json doc = json::parse(in);
        if (doc.at("format") != "aasn-dataset 1") throw LoadError("dataset: unsupported manifest format");
        m.config_text = doc.at("config").get<std::string>();
        m.roi_h = doc.at("roi").at(0).get<int>();
        m.roi_w = doc.at("roi").at(1).get<int>();
        for (const json& j : doc.at("samples")) {
            ManifestEntry e;
            e.index = j.at("index").get<int>();
            e.label = j.at("label").get<int>();
            e.split = j.at("split").get<std::string>();
            e.lesions = points_from(j.at("lesions"));
            e.frames.line.point = point_from(j.at("line").at("point"));
            e.frames.line.direction = point_from(j.at("line").at("direction"));
            e.frames.roi = roi_from(j.at("roi"));
            e.frames.roi_flipped = roi_from(j.at("roi_flipped"));
            e.warp = warp_from(j.at("warp"));
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw LoadError("dataset: malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

const std::vector<PreparedSample>& PreparedDataset::part(std::string_view split) const {
    if (split == "train") return train;
    if (split == "val") return val;
    if (split == "test") return test;
    throw ConfigError("dataset: unknown split '" + std::string(split) + "'");
}

PreparedSample prepare_sample(const Tensor& image, const ManifestEntry& entry, const RunConfig& config) {
    const model::ModelConfig& mc = config.model;
    const geometry::MirrorFrames& frames = entry.frames;
    if (frames.roi.out_h != mc.input_h || frames.roi.out_w != mc.input_w) {
        throw ConfigError("dataset: ROIs were cut at " + std::to_string(frames.roi.out_h) + "x" +
                          std::to_string(frames.roi.out_w) + " but the model expects " + std::to_string(mc.input_h) +
                          "x" + std::to_string(mc.input_w) + "; regenerate the data");
    }
    PreparedSample s;
    s.index = entry.index;
    s.label = entry.label;
    s.image = geometry::resample_roi(image, frames.roi);
    s.flipped = geometry::extract_flipped_roi(image, frames);
    s.flipped_warped = geometry::warp_image(s.flipped, entry.warp);
    const int fs = mc.feature_stride();
    s.grid = geometry::warp_to_grid<float>(entry.warp, mc.input_h / fs, mc.input_w / fs, mc.input_h, mc.input_w);
    for (Point p : entry.lesions) s.points.push_back(frames.roi.to_roi(p));
    const losses::FractureAnnotations ann{s.points, static_cast<double>(config.dilation_radius())};
    s.mask = losses::make_mask(ann, mc.input_h, mc.input_w, mc.output_stride);
    s.contrast_mask = losses::make_contrast_mask(s.mask, mc.output_stride, entry.warp, frames, fs);
    return s;
}

PreparedDataset prepare_dataset(const RunConfig& config, std::string_view only) {
    const Manifest manifest = read_manifest(config.data.dir);
    PreparedDataset out;
    for (const ManifestEntry& e : manifest.entries) {
        if (!only.empty() && e.split != only) continue;
        const Tensor image = io::read_png_gray(config.data.dir / "images" / (image_name(e.index) + ".png"));
        PreparedSample s = prepare_sample(image, e, config);
        if (e.split == "train") out.train.push_back(std::move(s));
        else if (e.split == "val") out.val.push_back(std::move(s));
        else if (e.split == "test") out.test.push_back(std::move(s));
        else throw LoadError("dataset: sample " + std::to_string(e.index) + " has unknown split '" + e.split + "'");
    }
    return out;
}

} // namespace aasn::pipeline
