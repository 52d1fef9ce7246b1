#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tkil/dataset_io.hpp"
#include "tkil/errors.hpp"
#include "tkil/harness.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void print_bundle_summary(const tkil::ResultsBundle& b) {
    const auto& last = b.per_seed;
    double task = 0, cls = 0, avg = 0;
    for (const auto& run : last) {
        task += run.back().task_accuracy;
        cls += run.back().class_accuracy;
        avg += run.back().avg_incremental_accuracy;
    }
    const double n = static_cast<double>(last.size());
    std::printf("final stage over %zu seed(s): task acc %.4f, class acc %.4f, "
                "avg incremental acc %.4f\n",
                last.size(), task / n, cls / n, avg / n);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental training with tangent-kernel regularization"};
    app.require_subcommand(1);

    std::string config_path, bundle_dir, gammas_arg, components_arg = "kd,kd+avg,full";
    bool force = false;

    auto* cmd_run = app.add_subcommand("run", "train on a task stream and write a results bundle");
    cmd_run->add_option("--config", config_path, "experiment config json")->required();
    cmd_run->add_flag("--force", force, "overwrite an existing results bundle");

    auto* cmd_sweep = app.add_subcommand("sweep-gamma", "repeat a run over several gamma values");
    cmd_sweep->add_option("--config", config_path, "experiment config json")->required();
    cmd_sweep->add_option("--gammas", gammas_arg, "comma separated gamma values")->required();
    cmd_sweep->add_flag("--force", force, "overwrite existing results bundles");

    auto* cmd_report = app.add_subcommand("report", "summarize a results bundle");
    cmd_report->add_option("bundle_dir", bundle_dir, "directory holding bundle.json")->required();

    auto* cmd_ablate = app.add_subcommand("ablate", "run selected component combinations");
    cmd_ablate->add_option("--config", config_path, "experiment config json")->required();
    cmd_ablate->add_option("--components", components_arg, "subset of kd,kd+avg,full");
    cmd_ablate->add_flag("--force", force, "overwrite existing results bundles");

    std::string out_dir;
    int per_class_train = 300, per_class_test = 80, image_size = 16;
    uint64_t gen_seed = 0;
    auto* cmd_gen = app.add_subcommand("gen-digits", "write the synthetic digit set as idx files");
    cmd_gen->add_option("--out", out_dir, "output directory")->required();
    cmd_gen->add_option("--per-class-train", per_class_train, "training images per digit");
    cmd_gen->add_option("--per-class-test", per_class_test, "test images per digit");
    cmd_gen->add_option("--size", image_size, "square image side, at least 16");
    cmd_gen->add_option("--seed", gen_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) {
            const tkil::ExperimentConfig c = tkil::load_config(config_path);
            const tkil::ResultsBundle b = tkil::run(c, force);
            print_bundle_summary(b);
            std::printf("results in %s\n", c.output_dir.c_str());
        } else if (cmd_sweep->parsed()) {
            const tkil::ExperimentConfig c = tkil::load_config(config_path);
            std::vector<double> gammas;
            for (const std::string& g : split_csv(gammas_arg)) gammas.push_back(std::stod(g));
            const tkil::GammaSweep sweep = tkil::gamma_sweep(c, gammas, force);
            for (size_t i = 0; i < sweep.gammas.size(); ++i)
                std::printf("gamma %-8g final-stage task acc %.4f\n", sweep.gammas[i],
                            sweep.task_acc[i].back());
            std::printf("grid in %s/gamma_grid.tsv\n", c.output_dir.c_str());
        } else if (cmd_report->parsed()) {
            tkil::report(bundle_dir, std::cout);
        } else if (cmd_ablate->parsed()) {
            const tkil::ExperimentConfig c = tkil::load_config(config_path);
            const auto rows = tkil::ablate(c, split_csv(components_arg), force);
            for (const auto& r : rows)
                std::printf("%-8s final task acc %.4f, final class acc %.4f\n",
                            r.component.c_str(), r.final_task_accuracy, r.final_class_accuracy);
            std::printf("table in %s/ablation.tsv\n", c.output_dir.c_str());
        } else if (cmd_gen->parsed()) {
            auto train = tkil::make_synthetic_digits(per_class_train, image_size, gen_seed, "train");
            auto test = tkil::make_synthetic_digits(per_class_test, image_size, gen_seed, "test");
            tkil::write_idx_dir(out_dir, train, test);
            std::printf("wrote %zu train and %zu test images to %s\n", train.size(), test.size(),
                        out_dir.c_str());
        }
    } catch (const tkil::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
