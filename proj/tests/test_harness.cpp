#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "tkil/dataset_io.hpp"
#include "tkil/errors.hpp"
#include "tkil/harness.hpp"

using namespace tkil;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / ("tkil_test_" + leaf);
    fs::remove_all(p);
    return p;
}

json tiny_blob_config(const std::string& out) {
    return {{"dataset",
             {{"type", "blobs"}, {"num_classes", 4}, {"per_class", 30}, {"per_class_test", 12},
              {"dim", 2}, {"separation", 6.0}, {"gen_seed", 5}}},
            {"arch", "mlp:2:8"},
            {"schedule", {{"num_tasks", 2}}},
            {"train",
             {{"epochs", 2}, {"batch_size", 16}, {"lr_initial", 0.05}, {"lr_decay_every", 2},
              {"lr_decay_factor", 0.5}, {"optimizer", "sgd"}}},
            {"finetune", {{"epochs", 1}, {"lr", 0.01}, {"optimizer", "sgd"}}},
            {"memory_budget", 40},
            {"seeds", {3}},
            {"output_dir", out}};
}

bool reports_equal(const std::vector<std::vector<StageReport>>& a,
                   const std::vector<std::vector<StageReport>>& b) {
    if (a.size() != b.size()) return false;
    for (size_t s = 0; s < a.size(); ++s) {
        if (a[s].size() != b[s].size()) return false;
        for (size_t t = 0; t < a[s].size(); ++t) {
            const StageReport &x = a[s][t], &y = b[s][t];
            if (x.stage != y.stage || x.seen_classes != y.seen_classes ||
                x.task_accuracy != y.task_accuracy || x.class_accuracy != y.class_accuracy ||
                x.oracle_class_accuracy != y.oracle_class_accuracy ||
                x.avg_incremental_accuracy != y.avg_incremental_accuracy)
                return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("config parsing validates and applies defaults") {
    const json good = tiny_blob_config("/tmp/unused");
    const ExperimentConfig c = parse_config(good);
    CHECK(c.arch == "mlp:2:8");
    CHECK(c.num_tasks == 2);
    CHECK(c.train.epochs == 2);
    CHECK(c.train.loss_weights.gamma == 0.1); // default
    CHECK(c.finetune.scope == "full_model");  // default
    CHECK(c.memory_budget == 40);

    json bad = good;
    bad.erase("dataset");
    CHECK_THROWS_AS(parse_config(bad), ConfigInvalid);
    bad = good;
    bad["seeds"] = json::array();
    CHECK_THROWS_AS(parse_config(bad), ConfigInvalid);
    bad = good;
    bad["arch"] = "vit:16";
    CHECK_THROWS_AS(parse_config(bad), ConfigInvalid);
    bad = good;
    bad["finetune"]["scope"] = "half_model";
    CHECK_THROWS_AS(parse_config(bad), ConfigInvalid);
    bad = good;
    bad["dataset"]["type"] = "tarball";
    CHECK_THROWS_AS(parse_config(bad), ConfigInvalid);
    bad = good;
    bad["memory_budget"] = 0;
    CHECK_THROWS_AS(parse_config(bad), ConfigInvalid);
}

TEST_CASE("config fingerprints track semantics, not presentation") {
    const ExperimentConfig a = parse_config(tiny_blob_config("/tmp/one"));
    const ExperimentConfig b = parse_config(tiny_blob_config("/tmp/two"));
    CHECK(config_fingerprint(a) == config_fingerprint(b)); // output_dir is not semantic

    // same fields spelled in a different textual order
    const std::string text = R"({"seeds":[3],"arch":"mlp:2:8","memory_budget":40,
        "schedule":{"num_tasks":2},
        "finetune":{"optimizer":"sgd","lr":0.01,"epochs":1},
        "train":{"optimizer":"sgd","lr_decay_factor":0.5,"lr_decay_every":2,
                 "lr_initial":0.05,"batch_size":16,"epochs":2},
        "dataset":{"separation":6.0,"per_class_test":12,"per_class":30,
                   "num_classes":4,"gen_seed":5,"dim":2,"type":"blobs"}})";
    const ExperimentConfig c = parse_config(json::parse(text));
    CHECK(config_fingerprint(c) == config_fingerprint(a));

    json changed = tiny_blob_config("/tmp/one");
    changed["loss_weights"] = {{"gamma", 0.7}};
    CHECK(config_fingerprint(parse_config(changed)) != config_fingerprint(a));
}

TEST_CASE("run persists a reloadable bundle and refuses silent overwrites") {
    const fs::path out = fresh_dir("run");
    const ExperimentConfig c = parse_config(tiny_blob_config(out.string()));

    const ResultsBundle b = run(c);
    REQUIRE(b.per_seed.size() == 1);
    REQUIRE(b.per_seed[0].size() == 2);
    CHECK(b.seeds == std::vector<uint64_t>{3});
    CHECK(b.fingerprint == config_fingerprint(c));

    CHECK(fs::exists(out / "config.json"));
    CHECK(fs::exists(out / "bundle.json"));
    CHECK(fs::exists(out / "metrics.jsonl"));
    CHECK(fs::exists(out / "checkpoints/seed3_stage1.tkar"));
    CHECK(fs::exists(out / "checkpoints/seed3_stage2.tkar"));
    CHECK(fs::exists(out / "checkpoints/seed3_memory.tkar"));

    // every metrics line is a parseable record with loss terms
    std::ifstream metrics(out / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) {
        const json rec = json::parse(line);
        CHECK(rec.contains("stage"));
        CHECK(rec.at("groups").is_array());
        ++lines;
    }
    // stage 1: ceil(60/16)=4 steps x 2 epochs; stage 2: ceil((60+40)/16)=7 x 2
    CHECK(lines == 22);

    const ResultsBundle loaded = load_bundle(out.string());
    CHECK(loaded.fingerprint == b.fingerprint);
    CHECK(loaded.version == b.version);
    CHECK(reports_equal(loaded.per_seed, b.per_seed));

    CHECK_THROWS_AS(run(c), OutputExists);
    CHECK_NOTHROW(run(c, true));
    fs::remove_all(out);
}

TEST_CASE("a one-point gamma sweep is exactly a run") {
    const fs::path sweep_out = fresh_dir("sweep");
    const fs::path run_out = fresh_dir("runref");

    json base = tiny_blob_config(sweep_out.string());
    base["loss_weights"] = {{"gamma", 0.3}};
    const GammaSweep sweep = gamma_sweep(parse_config(base), {0.3});

    json direct = tiny_blob_config(run_out.string());
    direct["loss_weights"] = {{"gamma", 0.3}};
    const ResultsBundle ref = run(parse_config(direct));

    REQUIRE(sweep.bundles.size() == 1);
    CHECK(reports_equal(sweep.bundles[0].per_seed, ref.per_seed));
    REQUIRE(sweep.task_acc.size() == 1);
    CHECK(sweep.task_acc[0].size() == 2);
    CHECK(sweep.task_acc[0][1] == ref.per_seed[0][1].task_accuracy);
    CHECK(fs::exists(sweep_out / "gamma_grid.tsv"));
    CHECK(fs::exists(sweep_out / "gamma_0.3" / "bundle.json"));

    fs::remove_all(sweep_out);
    fs::remove_all(run_out);
}

TEST_CASE("ablation maps component names onto training switches") {
    const fs::path out = fresh_dir("ablate");
    const ExperimentConfig c = parse_config(tiny_blob_config(out.string()));

    CHECK_THROWS_AS(ablate(c, {"frobnicate"}), ConfigInvalid);

    const auto rows = ablate(c, {"kd", "full"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].component == "kd");
    CHECK(rows[1].component == "full");
    CHECK(fs::exists(out / "ablation.tsv"));
    CHECK(fs::exists(out / "kd" / "bundle.json"));
    CHECK(fs::exists(out / "full" / "bundle.json"));
    for (const auto& r : rows) {
        CHECK(r.final_task_accuracy >= 0.0);
        CHECK(r.final_task_accuracy <= 1.0);
    }
    fs::remove_all(out);
}

TEST_CASE("report renders the bundle and recomputes nothing new") {
    const fs::path out = fresh_dir("report");
    const ExperimentConfig c = parse_config(tiny_blob_config(out.string()));
    const ResultsBundle b = run(c);

    std::ostringstream echo;
    report(out.string(), echo);
    CHECK(fs::exists(out / "table.tsv"));
    CHECK(fs::exists(out / "curves.svg"));

    // single seed: std columns are zero; means equal the raw reports
    std::ifstream tsv(out / "table.tsv");
    std::string header, row1, row2;
    std::getline(tsv, header);
    std::getline(tsv, row1);
    std::getline(tsv, row2);
    CHECK(header.find("task_acc_mean") != std::string::npos);
    std::istringstream r2(row2);
    int stage, seen;
    double ta_mean, ta_std, ca_mean, ca_std, oa_mean, avg_mean;
    r2 >> stage >> seen >> ta_mean >> ta_std >> ca_mean >> ca_std >> oa_mean >> avg_mean;
    CHECK(stage == 2);
    CHECK(seen == 4);
    CHECK(ta_std == 0.0);
    CHECK(ca_std == 0.0);
    CHECK(ta_mean == doctest::Approx(b.per_seed[0][1].task_accuracy).epsilon(1e-6));
    // the rendered average incremental accuracy is the mean of per-stage class accuracies
    const double recomputed =
        (b.per_seed[0][0].class_accuracy + b.per_seed[0][1].class_accuracy) / 2.0;
    CHECK(avg_mean == doctest::Approx(recomputed).epsilon(1e-6));

    const std::string table = echo.str();
    CHECK(table.find("stage\t") == 0);

    // svg has one polyline per curve with a point per stage
    std::ifstream svg(out / "curves.svg");
    std::stringstream buf;
    buf << svg.rdbuf();
    size_t count = 0, at = 0;
    while ((at = buf.str().find("<polyline", at)) != std::string::npos) {
        ++count;
        ++at;
    }
    CHECK(count == 3);

    CHECK_THROWS_AS(report((out / "missing").string(), echo), EmptyBundle);
    fs::remove_all(out);
}

TEST_CASE("synthetic digits form a balanced, reproducible image set") {
    const DatasetHandle d = make_synthetic_digits(5, 16, 2, "train");
    CHECK(d.size() == 50);
    CHECK(d.input_shape == std::vector<int>{1, 16, 16});
    CHECK(d.num_classes == 10);
    std::vector<int> counts(10, 0);
    for (int l : d.labels) ++counts[static_cast<size_t>(l)];
    for (int c = 0; c < 10; ++c) CHECK(counts[static_cast<size_t>(c)] == 5);
    for (double v : d.inputs) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    const DatasetHandle again = make_synthetic_digits(5, 16, 2, "train");
    CHECK(again.inputs == d.inputs);
    const DatasetHandle testsplit = make_synthetic_digits(5, 16, 2, "test");
    CHECK(testsplit.inputs != d.inputs);

    // the benchmark wrapper normalizes with train statistics
    const auto [train, test] = make_digit_benchmark(20, 8, 16, 2);
    double mean = 0.0;
    for (double v : train.inputs) mean += v;
    mean /= static_cast<double>(train.inputs.size());
    CHECK(std::abs(mean) < 1e-9);
    double var = 0.0;
    for (double v : train.inputs) var += v * v;
    var /= static_cast<double>(train.inputs.size());
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("idx files quantize to bytes and reload with train-statistics scaling") {
    const fs::path dir = fresh_dir("idx");
    fs::create_directories(dir);
    DatasetHandle train = make_synthetic_digits(4, 16, 7, "train");
    DatasetHandle test = make_synthetic_digits(2, 16, 7, "test");
    write_idx_dir(dir.string(), train, test);

    auto quantize = [](DatasetHandle d) {
        for (auto& v : d.inputs) v = std::lround(v * 255.0) / 255.0;
        return d;
    };
    DatasetHandle qtrain = quantize(train), qtest = quantize(test);
    normalize_pair(qtrain, qtest);

    const auto [ltrain, ltest] = load_idx_dir(dir.string());
    CHECK(ltrain.labels == train.labels);
    CHECK(ltest.labels == test.labels);
    CHECK(ltrain.input_shape == train.input_shape);
    CHECK(ltrain.inputs == qtrain.inputs);
    CHECK(ltest.inputs == qtest.inputs);
    fs::remove_all(dir);
}

TEST_CASE("array directories round-trip doubles exactly") {
    const fs::path dir = fresh_dir("arraydir");
    fs::create_directories(dir);
    DatasetHandle train = make_synthetic_blobs(3, 8, 4, 6.0, 1);
    DatasetHandle test = make_synthetic_blobs(3, 4, 4, 6.0, 2);
    test.split = "test";
    write_array_dir(dir.string(), train, test);
    const auto [ltrain, ltest] = load_array_dir(dir.string());
    CHECK(ltrain.inputs == train.inputs);
    CHECK(ltrain.labels == train.labels);
    CHECK(ltest.inputs == test.inputs);
    CHECK(ltest.labels == test.labels);
    CHECK(ltrain.input_shape == train.input_shape);
    CHECK(ltrain.num_classes == 3);
    fs::remove_all(dir);
}

TEST_CASE("dataset configs load through the same dispatch the cli uses") {
    json cfg = tiny_blob_config("/tmp/unused2");
    const ExperimentConfig c = parse_config(cfg);
    const auto [train, test] = load_dataset(c);
    CHECK(train.size() == 120);
    CHECK(test.size() == 48);
    CHECK(train.num_classes == 4);
    const StageSchedule sched = schedule_of(c, train);
    CHECK(sched.num_tasks == 2);
    CHECK(sched.classes_per_task == 2);
}
