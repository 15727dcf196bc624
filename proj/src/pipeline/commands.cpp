#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "aasn/image_io.hpp"
#include "aasn/losses.hpp"
#include "aasn/training.hpp"

namespace aasn::pipeline {

namespace {

namespace fs = std::filesystem;
using model::AasnModel;

struct Batch {
    Tensor image;
    Tensor flipped;
    Tensor grid;
    Tensor mask;
    Tensor contrast_mask;
};

Batch gather(std::span<const PreparedSample> samples, std::span<const int> order, const model::ModelConfig& mc) {
    std::vector<Tensor> image, flipped, grid, mask, contrast;
    for (int i : order) {
        const PreparedSample& s = samples[static_cast<std::size_t>(i)];
        image.push_back(s.image);
        flipped.push_back(mc.align == model::Align::image ? s.flipped_warped : s.flipped);
        grid.push_back(s.grid);
        mask.push_back(s.mask);
        contrast.push_back(s.contrast_mask);
    }
    return {stack_batch<float>(image), stack_batch<float>(flipped), stack_batch<float>(grid), stack_batch<float>(mask),
            stack_batch<float>(contrast)};
}

model::ForwardResult run_forward(AasnModel& net, const Batch& b) {
    return net.forward(b.image, b.flipped, &b.grid);
}

// Deep copy of every parameter and running statistic.
std::vector<std::vector<float>> snapshot(const AasnModel& net) {
    std::vector<std::vector<float>> out;
    for (const auto& group : {net.parameters(), net.buffers()}) {
        for (const auto& [name, t] : group) out.emplace_back(t.data().begin(), t.data().end());
    }
    return out;
}

void restore(AasnModel& net, const std::vector<std::vector<float>>& values) {
    std::size_t k = 0;
    for (const auto& group : {net.parameters(), net.buffers()}) {
        for (auto [name, t] : group) {
            std::copy(values[k].begin(), values[k].end(), t.data().begin());
            ++k;
        }
    }
}

std::string commented(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) out << "# " << line << '\n';
    return out.str();
}

std::vector<double> image_scores(const std::vector<metrics::EvalRecord>& records) {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(metrics::image_score(r.heatmap));
    return out;
}

double validation_auc(AasnModel& net, const PreparedDataset& data, const RunConfig& config) {
    const auto records = predict(net, data.val, config);
    std::vector<int> labels;
    for (const auto& r : records) labels.push_back(r.label());
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    return both ? metrics::auc(image_scores(records), labels) : 0.0;
}

Tensor upsample_to_roi(Tensor map, int roi_h) {
    while (map.shape().h < roi_h) map = upsample_bilinear2x(map);
    return map;
}

void write_heatmaps(const fs::path& dir, std::span<const PreparedSample> samples, AasnModel& net,
                    const RunConfig& config) {
    fs::create_directories(dir);
    const model::ModelConfig& mc = net.config();
    net.set_mode(Mode::eval);
    for (const PreparedSample& s : samples) {
        const int index[] = {0};
        const Batch b = gather(std::span<const PreparedSample>(&s, 1), index, mc);
        const model::ForwardResult out = run_forward(net, b);
        const Tensor heat = upsample_to_roi(out.prob, mc.input_h);
        const std::string name = image_name(s.index);
        io::write_png_gray(dir / (name + "_heatmap.png"), heat);

        const int fs = mc.feature_stride();
        io::RgbImage overlay(mc.input_w, mc.input_h);
        for (int y = 0; y < mc.input_h; ++y) {
            for (int x = 0; x < mc.input_w; ++x) {
                const double g = s.image.at(0, 0, y, x);
                const double h = heat.at(0, 0, y, x);
                const double m = s.contrast_mask.at(0, 0, y / fs, x / fs);
                overlay.set(x, y, g * (1 - h) + h, g * (1 - h) + 0.3 * m, g * (1 - h));
            }
        }
        io::write_png_rgb(dir / (name + "_overlay.png"), overlay);

        if (out.flipped_aligned.defined()) {
            Tensor a = out.features, f = out.flipped_aligned;
            if (mc.contrastive == model::Contrastive::on_with_projection) {
                a = net.project(a);
                f = net.project(f);
            }
            Tensor dist({1, 1, a.shape().h, a.shape().w});
            double peak = 1e-12;
            for (int y = 0; y < a.shape().h; ++y) {
                for (int x = 0; x < a.shape().w; ++x) {
                    double d = 0;
                    for (int c = 0; c < a.shape().c; ++c) {
                        const double diff = a.at(0, c, y, x) - f.at(0, c, y, x);
                        d += diff * diff;
                    }
                    dist.at(0, 0, y, x) = static_cast<float>(d);
                    peak = std::max(peak, d);
                }
            }
            Tensor big({1, 1, mc.input_h, mc.input_w});
            for (int y = 0; y < mc.input_h; ++y)
                for (int x = 0; x < mc.input_w; ++x) big.at(0, 0, y, x) = static_cast<float>(dist.at(0, 0, y / fs, x / fs) / peak);
            io::write_png_gray(dir / (name + "_distance.png"), big);
        }
    }
    (void)config;
}

std::string describe_mismatch(const model::ModelConfig& want, const model::ModelConfig& have) {
    std::istringstream a(want.to_text()), b(have.to_text());
    std::string la, lb, out;
    while (std::getline(a, la) && std::getline(b, lb)) {
        if (la != lb) out += "\n  config: " + la + "  checkpoint: " + lb;
    }
    return out;
}

// Starts the heatmap logit at the log-odds of the positive pixel rate, so the
// first epochs are not spent learning the class prior.
void init_head_bias(const NamedTensors<float>& params, std::span<const PreparedSample> samples) {
    double positive = 0;
    double total = 0;
    for (const PreparedSample& s : samples) {
        for (float v : s.mask.data()) positive += v;
        total += static_cast<double>(s.mask.numel());
    }
    if (positive <= 0 || positive >= total) return;
    const double rate = positive / total;
    for (const auto& [name, t] : params) {
        if (name == "head.bias") {
            Tensor bias = t;
            bias.data()[0] = static_cast<float>(std::log(rate / (1 - rate)));
        }
    }
}

} // namespace

TrainResult train(const RunConfig& config, const PreparedDataset& data, std::ostream* log) {
    config.validate();
    if (data.train.empty()) throw ConfigError("train: the training split is empty");
    const model::ModelConfig& mc = config.model;
    TrainResult result{AasnModel(mc, config.train.seed), {}, 0, -1};
    AasnModel& net = result.model;
    NamedTensors<float> params = net.parameters();
    init_head_bias(params, data.train);
    AdamState adam;
    const AdamConfig adam_config{config.train.lr, config.train.beta1, config.train.beta2, config.train.eps};
    const bool contrastive = mc.contrastive != model::Contrastive::off;
    losses::Projection<float> projection;
    if (mc.contrastive == model::Contrastive::on_with_projection) {
        projection = [&net](const Tensor& x) { return net.project(x); };
    }

    std::vector<int> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<float>> best;
    for (int epoch = 1; epoch <= config.train.epochs; ++epoch) {
        std::seed_seq seq{static_cast<std::uint32_t>(config.train.seed),
                          static_cast<std::uint32_t>(config.train.seed >> 32), static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);
        net.set_mode(Mode::train);
        EpochLog entry{epoch};
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.train.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.train.batch_size));
            const std::span<const int> members(order.data() + start, stop - start);
            const Batch b = gather(data.train, members, mc);
            Tape tape;
            TapeScope scope(tape);
            const model::ForwardResult out = run_forward(net, b);
            const Tensor bce = losses::bce_with_logits(out.logits, b.mask);
            Tensor loss = bce;
            double cl_value = 0;
            if (contrastive) {
                const Tensor cl = losses::contrastive_loss(out.features, out.flipped_aligned, b.contrast_mask,
                                                           config.loss.margin, projection);
                cl_value = cl.item();
                loss = losses::total_loss(bce, cl, config.loss.weight);
            }
            const double value = loss.item();
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "train: non-finite loss at epoch " << epoch << ", batch " << batches << " (bce " << bce.item()
                    << ", contrastive " << cl_value << "; samples";
                for (int i : members) msg << ' ' << data.train[static_cast<std::size_t>(i)].index;
                msg << ')';
                throw DivergenceError(msg.str());
            }
            tape.backward(loss);
            adam_step(params, adam, adam_config);
            zero_grads(params);
            entry.bce += bce.item();
            entry.contrastive += cl_value;
            entry.total += value;
            ++batches;
        }
        entry.bce /= batches;
        entry.contrastive /= batches;
        entry.total /= batches;
        entry.val_auc = validation_auc(net, data, config);
        if (entry.val_auc > result.best_val_auc) {
            result.best_val_auc = entry.val_auc;
            result.best_epoch = epoch;
            best = snapshot(net);
        }
        result.log.push_back(entry);
        if (log != nullptr) {
            *log << "epoch " << epoch << " bce " << std::setprecision(6) << entry.bce << " contrastive "
                 << entry.contrastive << " total " << entry.total << " val_auc " << entry.val_auc << std::endl;
        }
    }
    restore(net, best);
    net.set_mode(Mode::eval);
    return result;
}

std::vector<metrics::EvalRecord> predict(AasnModel& net, std::span<const PreparedSample> samples,
                                         const RunConfig& config) {
    const Mode previous = net.mode();
    net.set_mode(Mode::eval);
    const model::ModelConfig& mc = net.config();
    std::vector<metrics::EvalRecord> records;
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = static_cast<std::size_t>(config.train.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        const Batch b = gather(samples, std::span<const int>(order.data() + start, stop - start), mc);
        const Tensor prob = run_forward(net, b).prob;
        for (std::size_t i = start; i < stop; ++i) {
            records.push_back({slice_batch(prob, static_cast<int>(i - start)), mc.output_stride, samples[i].points,
                               config.eval.ambiguity_radius});
        }
    }
    net.set_mode(previous);
    return records;
}

EvalReport evaluate(AasnModel& net, std::span<const PreparedSample> samples, const RunConfig& config) {
    EvalReport report;
    report.records = predict(net, samples, config);
    report.summary = metrics::summarize(report.records, &report.froc);
    return report;
}

void write_report(std::ostream& out, const RunConfig& config, const metrics::Summary& summary) {
    out << "# run configuration\n" << commented(config.to_text());
    metrics::write_summary(out, summary);
}

metrics::Summary read_report(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("report: cannot read " + path.string());
    metrics::Summary s;
    std::string line;
    int found = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        const std::string key = line.substr(0, tab);
        double* slot = key == "auc" ? &s.auc : key == "ap" ? &s.ap : key == "recall_fp1" ? &s.recall_fp1
                     : key == "recall_fp10" ? &s.recall_fp10 : nullptr;
        if (slot == nullptr) continue;
        *slot = std::stod(line.substr(tab + 1));
        ++found;
    }
    if (found != 4) throw LoadError("report: " + path.string() + " lacks some of auc, ap, recall_fp1, recall_fp10");
    return s;
}

AasnModel load_checkpoint(const fs::path& path, RunConfig* embedded) {
    std::string attachment;
    AasnModel net = AasnModel::load(path, &attachment);
    if (embedded != nullptr) {
        if (attachment.empty()) throw LoadError("checkpoint " + path.string() + " carries no run configuration");
        try {
            *embedded = RunConfig::from_text(attachment);
        } catch (const ConfigError& e) {
            throw LoadError("checkpoint " + path.string() + ": bad embedded configuration: " + e.what());
        }
    }
    net.set_mode(Mode::eval);
    return net;
}

TrainArtifacts cmd_train(const RunConfig& config, std::ostream* progress) {
    config.validate();
    const PreparedDataset data = prepare_dataset(config);
    fs::create_directories(config.train.out_dir);
    TrainArtifacts art;
    art.log = config.train.out_dir / "train.log";
    art.checkpoint = config.train.out_dir / "model.ckpt";
    art.report = config.train.out_dir / ("report_" + config.eval.split + ".txt");

    std::ofstream log(art.log);
    log << commented(config.to_text());
    std::ostringstream lines;
    TrainResult result = [&] {
        try {
            return train(config, data, &lines);
        } catch (...) {
            log << lines.str();
            throw;
        }
    }();
    log << lines.str() << "best_epoch " << result.best_epoch << " val_auc " << result.best_val_auc << '\n';
    if (progress != nullptr) *progress << lines.str();
    result.model.save(art.checkpoint, config.to_text());

    const EvalReport report = evaluate(result.model, data.part(config.eval.split), config);
    art.summary = report.summary;
    std::ofstream out(art.report);
    write_report(out, config, report.summary);
    if (!out || !log) throw Error("train: failed writing artifacts under " + config.train.out_dir.string());
    return art;
}

metrics::Summary cmd_eval(const RunConfig& config, const EvalOptions& options, std::ostream* progress) {
    config.validate();
    AasnModel net = load_checkpoint(options.checkpoint);
    if (!(net.config() == config.model)) {
        throw ConfigError("eval: model settings differ from the checkpoint:" + describe_mismatch(config.model, net.config()));
    }
    const PreparedDataset data = prepare_dataset(config, config.eval.split);
    const auto& samples = data.part(config.eval.split);
    if (samples.empty()) throw ConfigError("eval: split '" + config.eval.split + "' is empty");
    const EvalReport report = evaluate(net, samples, config);

    const fs::path path = options.report.empty()
                              ? options.checkpoint.parent_path() / ("eval_" + config.eval.split + ".txt")
                              : options.report;
    std::ofstream out(path);
    write_report(out, config, report.summary);
    out << "# froc\n";
    std::ostringstream froc;
    metrics::write_froc(froc, report.froc);
    out << commented(froc.str());
    if (!out) throw Error("eval: failed writing " + path.string());
    if (options.heatmap_dir) write_heatmaps(*options.heatmap_dir, samples, net, config);
    if (progress != nullptr) metrics::write_summary(*progress, report.summary);
    return report.summary;
}

WarpResult cmd_warp(const fs::path& image_path, const fs::path& landmark_path, const fs::path& out_dir,
                    const RunConfig& config) {
    const Tensor image = io::read_png_gray(image_path);
    const geometry::LandmarkSet lm = geometry::read_landmarks(landmark_path);
    const int h = image.shape().h, w = image.shape().w;
    lm.validate(w, h);
    const int out_h = config.model.input_h, out_w = config.model.input_w;
    const geometry::PairGeometry g =
        geometry::build_pair_geometry(lm, h, w, config.data.roi_margin, out_h, out_w, config.data.lambda_tps);
    const Tensor roi = geometry::resample_roi(image, g.frames.roi);
    const Tensor flipped = geometry::extract_flipped_roi(image, g.frames);
    const Tensor warped = geometry::warp_image(flipped, g.warp);
    Tensor checker({1, 1, out_h, out_w});
    constexpr int kTile = 8;
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            checker.at(0, 0, y, x) = ((x / kTile + y / kTile) % 2 == 0 ? roi : warped).at(0, 0, y, x);

    fs::create_directories(out_dir);
    io::write_png_gray(out_dir / "roi.png", roi);
    io::write_png_gray(out_dir / "flipped.png", flipped);
    io::write_png_gray(out_dir / "warped.png", warped);
    io::write_png_gray(out_dir / "checkerboard.png", checker);

    WarpResult result;
    for (int i = 0; i < geometry::kLandmarkCount; ++i) {
        result.residuals.push_back(geometry::distance(g.warp(g.roi_landmarks[i]), g.flipped_roi_landmarks[i]));
    }
    return result;
}

} // namespace aasn::pipeline
