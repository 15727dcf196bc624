#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aasn/dataset.hpp"
#include "aasn/metrics.hpp"
#include "aasn/model.hpp"
#include "aasn/run_config.hpp"

namespace aasn::pipeline {

struct EpochLog {
    int epoch = 0;
    double bce = 0;          // mean over batches
    double contrastive = 0;  // mean over batches; 0 when disabled
    double total = 0;
    double val_auc = 0;
};

struct TrainResult {
    model::AasnModel model;  // weights of the best validation epoch
    std::vector<EpochLog> log;
    int best_epoch = 0;
    double best_val_auc = 0;
};

// Runs config.train.epochs epochs of Adam on dataset.train and keeps the
// weights with the best validation AUC. Throws DivergenceError naming the
// epoch and batch when a loss turns non-finite. `log` receives one line per
// epoch when given.
[[nodiscard]] TrainResult train(const RunConfig& config, const PreparedDataset& dataset, std::ostream* log = nullptr);

// Heatmap of every sample, in eval mode.
[[nodiscard]] std::vector<metrics::EvalRecord> predict(model::AasnModel& model, std::span<const PreparedSample> samples,
                                                       const RunConfig& config);

struct EvalReport {
    metrics::Summary summary;
    metrics::FrocCurve froc;
    std::vector<metrics::EvalRecord> records;
};

[[nodiscard]] EvalReport evaluate(model::AasnModel& model, std::span<const PreparedSample> samples,
                                  const RunConfig& config);

// "# " prefixed run configuration, then the summary rows.
void write_report(std::ostream& out, const RunConfig& config, const metrics::Summary& summary);
// Reads the metric rows of a report back.
[[nodiscard]] metrics::Summary read_report(const std::filesystem::path& path);

// Commands behind the CLI. Each writes its artifacts and returns normally or
// throws one of the library errors.
struct TrainArtifacts {
    std::filesystem::path checkpoint;
    std::filesystem::path log;
    std::filesystem::path report;
    metrics::Summary summary;  // best checkpoint on config.eval.split
};
TrainArtifacts cmd_train(const RunConfig& config, std::ostream* progress = nullptr);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::optional<std::filesystem::path> heatmap_dir;
    std::filesystem::path report;  // empty: <checkpoint dir>/eval_<split>.txt
};
// Data and evaluation settings come from `config`; its model section must
// match the checkpoint's, otherwise ConfigError lists the differences.
metrics::Summary cmd_eval(const RunConfig& config, const EvalOptions& options, std::ostream* progress = nullptr);

struct WarpResult {
    std::vector<double> residuals;  // |T(p_i) - q_i| per landmark, flipped-ROI pixels
};
// Writes roi.png, flipped.png, warped.png and checkerboard.png into out_dir.
WarpResult cmd_warp(const std::filesystem::path& image, const std::filesystem::path& landmarks,
                    const std::filesystem::path& out_dir, const RunConfig& config);

// Loads a checkpoint and the run configuration embedded in it.
[[nodiscard]] model::AasnModel load_checkpoint(const std::filesystem::path& path, RunConfig* embedded = nullptr);

} // namespace aasn::pipeline
