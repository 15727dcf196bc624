#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aasn/dataset.hpp"
#include "aasn/gradcheck.hpp"
#include "aasn/training.hpp"

namespace {

enum Exit { ok = 0, config_error = 1, runtime_error = 2, check_failure = 3 };

struct ConfigFlags {
    std::string file;
    std::string variant;
    std::vector<std::string> overrides;

    void attach(CLI::App& cmd) {
        cmd.add_option("-c,--config", file, "INI run configuration");
        cmd.add_option("--variant", variant, "baseline, ff, ff_fa, full, ff_fa_cl or no_proj");
        cmd.add_option("-s,--set", overrides, "section.key=value override (repeatable)");
    }

    // Environment overrides apply to paths only and lose against --set.
    aasn::RunConfig resolve(aasn::RunConfig base) const {
        aasn::RunConfig c = file.empty() ? std::move(base) : aasn::RunConfig::from_file(file);
        if (const char* dir = std::getenv("AASN_DATA_DIR")) c.data.dir = dir;
        if (const char* dir = std::getenv("AASN_OUT_DIR")) c.train.out_dir = dir;
        if (!variant.empty()) c.apply_variant(variant);
        for (const std::string& o : overrides) c.apply_override(o);
        c.validate();
        return c;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Symmetry-aware Siamese detector: data generation, training and evaluation"};
    app.require_subcommand(1);

    ConfigFlags gen_flags;
    bool force = false;
    CLI::App* gen = app.add_subcommand("gen-data", "generate the phantom dataset");
    gen_flags.attach(*gen);
    gen->add_flag("--force", force, "overwrite an existing dataset");

    ConfigFlags train_flags;
    CLI::App* train = app.add_subcommand("train", "train a model and evaluate its best checkpoint");
    train_flags.attach(*train);

    ConfigFlags eval_flags;
    aasn::pipeline::EvalOptions eval_options;
    std::string heatmaps;
    std::string checkpoint;
    std::string report;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    eval_flags.attach(*eval);
    eval->add_option("checkpoint", checkpoint, "model checkpoint")->required();
    eval->add_option("--heatmaps", heatmaps, "directory for heatmap and overlay PNGs");
    eval->add_option("--report", report, "report path (default: next to the checkpoint)");

    ConfigFlags warp_flags;
    std::string image, landmarks, warp_out = "warp";
    CLI::App* warp = app.add_subcommand("warp", "visualize the ROI pair and the fitted warp");
    warp_flags.attach(*warp);
    warp->add_option("image", image, "PNG image")->required();
    warp->add_option("landmarks", landmarks, "landmark file")->required();
    warp->add_option("-o,--out", warp_out, "output directory");

    aasn::gradcheck::Options grad_options;
    std::string fault;
    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    grad->add_option("--instances", grad_options.instances, "random instances per op")->check(CLI::PositiveNumber);
    grad->add_option("--seed", grad_options.seed, "random seed");
    grad->add_option("--inject-fault", fault, "corrupt the backward pass of one op (harness self-test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : config_error;
    }

    try {
        if (gen->parsed()) {
            const aasn::RunConfig config = gen_flags.resolve({});
            const auto manifest = aasn::pipeline::generate_dataset(config, force);
            std::cout << "wrote " << manifest.entries.size() << " images to " << config.data.dir.string() << " (train "
                      << manifest.indices("train").size() << ", val " << manifest.indices("val").size() << ", test "
                      << manifest.indices("test").size() << ")\n";
        } else if (train->parsed()) {
            const aasn::RunConfig config = train_flags.resolve({});
            const auto art = aasn::pipeline::cmd_train(config, &std::cout);
            std::cout << "checkpoint " << art.checkpoint.string() << "\nreport " << art.report.string() << '\n';
            aasn::metrics::write_summary(std::cout, art.summary);
        } else if (eval->parsed()) {
            aasn::RunConfig embedded;
            (void)aasn::pipeline::load_checkpoint(checkpoint, &embedded);
            const aasn::RunConfig config = eval_flags.resolve(embedded);
            eval_options.checkpoint = checkpoint;
            if (!heatmaps.empty()) eval_options.heatmap_dir = heatmaps;
            eval_options.report = report;
            (void)aasn::pipeline::cmd_eval(config, eval_options, &std::cout);
        } else if (warp->parsed()) {
            const aasn::RunConfig config = warp_flags.resolve({});
            const auto result = aasn::pipeline::cmd_warp(image, landmarks, warp_out, config);
            const auto& schema = aasn::geometry::landmark_schema();
            std::cout << "landmark\tresidual_px\n";
            for (std::size_t i = 0; i < result.residuals.size(); ++i) {
                std::cout << schema[i].name << '\t' << std::setprecision(3) << std::scientific << result.residuals[i]
                          << '\n';
            }
        } else if (grad->parsed()) {
            aasn::testing::inject_backward_fault(fault);
            const auto rows = aasn::gradcheck::run(grad_options);
            aasn::gradcheck::write_table(std::cout, rows);
            if (!aasn::gradcheck::all_passed(rows)) return check_failure;
        }
    } catch (const aasn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return runtime_error;
    }
    return ok;
}
