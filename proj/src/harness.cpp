#include "tkil/harness.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "tkil/archive.hpp"
#include "tkil/dataset_io.hpp"
#include "tkil/errors.hpp"
#include "tkil/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tkil {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

json report_to_json(const StageReport& r) {
    json per_task = json::array();
    for (const auto& pt : r.per_task)
        per_task.push_back({{"task", pt.task},
                            {"count", pt.count},
                            {"task_accuracy", pt.task_accuracy},
                            {"class_accuracy", pt.class_accuracy}});
    return {{"stage", r.stage},
            {"seen_classes", r.seen_classes},
            {"task_accuracy", r.task_accuracy},
            {"class_accuracy", r.class_accuracy},
            {"oracle_class_accuracy", r.oracle_class_accuracy},
            {"avg_incremental_accuracy", r.avg_incremental_accuracy},
            {"per_task", per_task}};
}

StageReport report_from_json(const json& j) {
    StageReport r;
    r.stage = j.at("stage").get<int>();
    r.seen_classes = j.at("seen_classes").get<int>();
    r.task_accuracy = j.at("task_accuracy").get<double>();
    r.class_accuracy = j.at("class_accuracy").get<double>();
    r.oracle_class_accuracy = j.at("oracle_class_accuracy").get<double>();
    r.avg_incremental_accuracy = j.at("avg_incremental_accuracy").get<double>();
    for (const auto& pj : j.at("per_task")) {
        StageReport::PerTask pt;
        pt.task = pj.at("task").get<int>();
        pt.count = pj.at("count").get<int>();
        pt.task_accuracy = pj.at("task_accuracy").get<double>();
        pt.class_accuracy = pj.at("class_accuracy").get<double>();
        r.per_task.push_back(pt);
    }
    return r;
}

void write_step_records(std::ofstream& os, uint64_t seed, const std::vector<StepRecord>& records) {
    for (const auto& rec : records) {
        json groups = json::array();
        for (const auto& g : rec.groups)
            groups.push_back({{"task", g.task},
                              {"count", g.count},
                              {"class", g.terms.class_value},
                              {"kd", g.terms.kd_value},
                              {"gtk", g.terms.gtk_value},
                              {"total", g.terms.total},
                              {"gtk_skipped", g.terms.gtk_skipped}});
        json line = {{"seed", seed},   {"stage", rec.stage}, {"epoch", rec.epoch},
                     {"step", rec.step}, {"lr", rec.lr},       {"groups", groups}};
        os << line.dump() << "\n";
    }
}

struct SeedStats {
    double mean = 0.0, stddev = 0.0;
};

SeedStats stats_of(const std::vector<double>& v) {
    SeedStats s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
    return s;
}

// accuracy-vs-stage curves as a small static SVG
void write_curves_svg(const std::string& path, const ResultsBundle& b) {
    const int stages = static_cast<int>(b.per_seed.at(0).size());
    const double W = 640, H = 420, L = 60, R = 20, T = 30, B = 50;
    const double px = (W - L - R) / std::max(1, stages - 1);
    auto xpos = [&](int s) { return L + px * s; };
    auto ypos = [&](double acc) { return T + (1.0 - acc) * (H - T - B); };

    struct Curve {
        const char* label;
        const char* color;
        std::vector<double> ys;
    };
    std::vector<Curve> curves = {{"task accuracy", "#c0392b", {}},
                                 {"class accuracy", "#2980b9", {}},
                                 {"avg incremental", "#27ae60", {}}};
    for (int s = 0; s < stages; ++s) {
        std::vector<double> ta, ca, aa;
        for (const auto& run : b.per_seed) {
            ta.push_back(run[static_cast<size_t>(s)].task_accuracy);
            ca.push_back(run[static_cast<size_t>(s)].class_accuracy);
            aa.push_back(run[static_cast<size_t>(s)].avg_incremental_accuracy);
        }
        curves[0].ys.push_back(stats_of(ta).mean);
        curves[1].ys.push_back(stats_of(ca).mean);
        curves[2].ys.push_back(stats_of(aa).mean);
    }

    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    for (int g = 0; g <= 10; ++g) {
        const double y = ypos(g / 10.0);
        f << "<line x1='" << L << "' y1='" << y << "' x2='" << W - R << "' y2='" << y
          << "' stroke='#eeeeee'/>\n";
        f << "<text x='" << L - 8 << "' y='" << y + 4
          << "' font-size='11' text-anchor='end'>" << fmt_num(g / 10.0) << "</text>\n";
    }
    for (int s = 0; s < stages; ++s)
        f << "<text x='" << xpos(s) << "' y='" << H - B + 18
          << "' font-size='11' text-anchor='middle'>S" << s + 1 << "</text>\n";
    f << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
      << "' stroke='black'/>\n";
    f << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
      << "' stroke='black'/>\n";
    double ly = T + 10;
    for (const auto& c : curves) {
        f << "<polyline fill='none' stroke='" << c.color << "' stroke-width='2' points='";
        for (int s = 0; s < stages; ++s)
            f << xpos(s) << "," << ypos(c.ys[static_cast<size_t>(s)]) << " ";
        f << "'/>\n";
        for (int s = 0; s < stages; ++s)
            f << "<circle cx='" << xpos(s) << "' cy='" << ypos(c.ys[static_cast<size_t>(s)])
              << "' r='3' fill='" << c.color << "'/>\n";
        f << "<rect x='" << W - 200 << "' y='" << ly - 9 << "' width='12' height='12' fill='"
          << c.color << "'/>\n";
        f << "<text x='" << W - 182 << "' y='" << ly + 2 << "' font-size='12'>" << c.label
          << "</text>\n";
        ly += 18;
    }
    f << "<text x='" << (L + W - R) / 2 << "' y='" << H - 12
      << "' font-size='12' text-anchor='middle'>stage</text>\n";
    f << "</svg>\n";
}

void write_table_tsv(const std::string& path, const ResultsBundle& b, std::ostream* echo) {
    const size_t stages = b.per_seed.at(0).size();
    std::ostringstream out;
    out << "stage\tseen_classes\ttask_acc_mean\ttask_acc_std\tclass_acc_mean\tclass_acc_std"
           "\toracle_class_acc_mean\tavg_incremental_acc_mean\n";
    for (size_t s = 0; s < stages; ++s) {
        std::vector<double> ta, ca, oa, aa;
        for (const auto& run : b.per_seed) {
            ta.push_back(run[s].task_accuracy);
            ca.push_back(run[s].class_accuracy);
            oa.push_back(run[s].oracle_class_accuracy);
            aa.push_back(run[s].avg_incremental_accuracy);
        }
        out << b.per_seed[0][s].stage << "\t" << b.per_seed[0][s].seen_classes << "\t"
            << fmt_num(stats_of(ta).mean) << "\t" << fmt_num(stats_of(ta).stddev) << "\t"
            << fmt_num(stats_of(ca).mean) << "\t" << fmt_num(stats_of(ca).stddev) << "\t"
            << fmt_num(stats_of(oa).mean) << "\t" << fmt_num(stats_of(aa).mean) << "\n";
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << out.str();
    if (echo) *echo << out.str();
}

} // namespace

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    try {
        if (!j.contains("dataset") || !j.at("dataset").contains("type"))
            throw ConfigInvalid("config needs dataset.type");
        c.dataset = j.at("dataset");
        c.arch = j.value("arch", c.arch);
        const json sched = j.value("schedule", json::object());
        c.num_tasks = sched.value("num_tasks", c.num_tasks);
        c.shuffle_classes = sched.value("shuffle_classes", c.shuffle_classes);
        c.schedule_seed = sched.value("seed", c.schedule_seed);

        const json t = j.value("train", json::object());
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.lr_initial = t.value("lr_initial", c.train.lr_initial);
        c.train.lr_decay_every = t.value("lr_decay_every", c.train.lr_decay_every);
        c.train.lr_decay_factor = t.value("lr_decay_factor", c.train.lr_decay_factor);
        c.train.inner_steps_per_group = t.value("inner_steps_per_group", 1);
        c.train.optimizer_id = t.value("optimizer", c.train.optimizer_id);

        const json lw = j.value("loss_weights", json::object());
        c.train.loss_weights.alpha = lw.value("alpha", 1.0);
        c.train.loss_weights.beta = lw.value("beta", 1.0);
        c.train.loss_weights.gamma = lw.value("gamma", 0.1);

        const json ab = j.value("ablation", json::object());
        c.train.disable_kd = ab.value("disable_kd", false);
        c.train.disable_gtk = ab.value("disable_gtk", false);
        c.train.disable_averaging = ab.value("disable_averaging", false);
        c.train.average_includes_untrained_clones =
            ab.value("average_includes_untrained_clones", false);

        const json ft = j.value("finetune", json::object());
        c.finetune.epochs = ft.value("epochs", c.finetune.epochs);
        c.finetune.lr = ft.value("lr", c.finetune.lr);
        c.finetune.scope = ft.value("scope", c.finetune.scope);
        c.finetune.batch_size = ft.value("batch_size", c.finetune.batch_size);
        c.finetune.optimizer_id = ft.value("optimizer", c.finetune.optimizer_id);
        c.finetune.eval_batch_size = ft.value("eval_batch_size", c.finetune.eval_batch_size);

        c.memory_budget = j.value("memory_budget", c.memory_budget);
        c.seeds = j.value("seeds", std::vector<uint64_t>{});
        c.output_dir = j.value("output_dir", std::string());
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("malformed config: ") + e.what());
    }
    if (c.seeds.empty()) throw ConfigInvalid("config needs a non-empty seeds list");
    if (c.num_tasks <= 0) throw ConfigInvalid("num_tasks must be positive");
    if (c.memory_budget <= 0) throw ConfigInvalid("memory_budget must be positive");
    if (c.finetune.scope != "full_model" && c.finetune.scope != "head_only")
        throw ConfigInvalid("finetune.scope must be full_model or head_only");
    const std::string& ty = c.dataset.at("type").get_ref<const std::string&>();
    if (ty != "digits" && ty != "blobs" && ty != "idx" && ty != "dir")
        throw ConfigInvalid("unknown dataset type " + ty);
    try {
        (void)make_model(c.arch, 0, 0);
    } catch (const Error& e) {
        throw ConfigInvalid(std::string("bad arch: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigInvalid("cannot open config " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("config is not valid json: ") + e.what());
    }
    return parse_config(j);
}

json canonical_config_json(const ExperimentConfig& c) {
    return {{"dataset", c.dataset},
            {"arch", c.arch},
            {"schedule",
             {{"num_tasks", c.num_tasks},
              {"shuffle_classes", c.shuffle_classes},
              {"seed", c.schedule_seed}}},
            {"train",
             {{"epochs", c.train.epochs},
              {"batch_size", c.train.batch_size},
              {"lr_initial", c.train.lr_initial},
              {"lr_decay_every", c.train.lr_decay_every},
              {"lr_decay_factor", c.train.lr_decay_factor},
              {"inner_steps_per_group", c.train.inner_steps_per_group},
              {"optimizer", c.train.optimizer_id}}},
            {"loss_weights",
             {{"alpha", c.train.loss_weights.alpha},
              {"beta", c.train.loss_weights.beta},
              {"gamma", c.train.loss_weights.gamma}}},
            {"ablation",
             {{"disable_kd", c.train.disable_kd},
              {"disable_gtk", c.train.disable_gtk},
              {"disable_averaging", c.train.disable_averaging},
              {"average_includes_untrained_clones", c.train.average_includes_untrained_clones}}},
            {"finetune",
             {{"epochs", c.finetune.epochs},
              {"lr", c.finetune.lr},
              {"scope", c.finetune.scope},
              {"batch_size", c.finetune.batch_size},
              {"optimizer", c.finetune.optimizer_id},
              {"eval_batch_size", c.finetune.eval_batch_size}}},
            {"memory_budget", c.memory_budget},
            {"seeds", c.seeds}};
}

uint64_t config_fingerprint(const ExperimentConfig& c) {
    return fnv1a64(canonical_config_json(c).dump());
}

std::pair<DatasetHandle, DatasetHandle> load_dataset(const ExperimentConfig& c) {
    const json& d = c.dataset;
    const std::string ty = d.at("type").get<std::string>();
    if (ty == "digits") {
        return make_digit_benchmark(d.value("per_class_train", 300), d.value("per_class_test", 80),
                                    d.value("image_size", 16), d.value("gen_seed", 0ull));
    }
    if (ty == "blobs") {
        const uint64_t gen_seed = d.value("gen_seed", 0ull);
        DatasetHandle train =
            make_synthetic_blobs(d.value("num_classes", 6), d.value("per_class", 100),
                                 d.value("dim", 2), d.value("separation", 6.0), gen_seed);
        DatasetHandle test = make_synthetic_blobs(
            d.value("num_classes", 6), d.value("per_class_test", 40), d.value("dim", 2),
            d.value("separation", 6.0), mix_seed(gen_seed, 0x74657374ull));
        test.split = "test";
        return {std::move(train), std::move(test)};
    }
    if (ty == "idx") return load_idx_dir(d.at("path").get<std::string>());
    if (ty == "dir") return load_array_dir(d.at("path").get<std::string>());
    throw ConfigInvalid("unknown dataset type " + ty);
}

StageSchedule schedule_of(const ExperimentConfig& c, const DatasetHandle& train) {
    return build_schedule(train.num_classes, c.num_tasks, c.schedule_seed, c.shuffle_classes);
}

json bundle_to_json(const ResultsBundle& b) {
    char fp[32];
    std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(b.fingerprint));
    json per_seed = json::array();
    for (const auto& run : b.per_seed) {
        json reports = json::array();
        for (const auto& r : run) reports.push_back(report_to_json(r));
        per_seed.push_back(reports);
    }
    return {{"fingerprint", fp}, {"version", b.version}, {"seeds", b.seeds},
            {"reports", per_seed}};
}

ResultsBundle bundle_from_json(const json& j) {
    ResultsBundle b;
    b.fingerprint = std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16);
    b.version = j.at("version").get<std::string>();
    b.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    for (const auto& run : j.at("reports")) {
        std::vector<StageReport> reports;
        for (const auto& rj : run) reports.push_back(report_from_json(rj));
        b.per_seed.push_back(std::move(reports));
    }
    return b;
}

ResultsBundle load_bundle(const std::string& dir) {
    std::ifstream f(dir + "/bundle.json");
    if (!f) throw EmptyBundle("no bundle.json in " + dir);
    json j;
    try {
        f >> j;
        return bundle_from_json(j);
    } catch (const json::exception& e) {
        throw EmptyBundle(std::string("unreadable bundle: ") + e.what());
    }
}

ResultsBundle run(const ExperimentConfig& c, bool force) {
    if (c.output_dir.empty()) throw ConfigInvalid("config needs output_dir");
    const uint64_t fp = config_fingerprint(c);
    if (fs::exists(c.output_dir + "/bundle.json") && !force) {
        try {
            const ResultsBundle prev = load_bundle(c.output_dir);
            if (prev.fingerprint == fp)
                throw OutputExists(c.output_dir + " already holds results for this exact config; "
                                                  "use force to overwrite");
        } catch (const EmptyBundle&) {
        }
        throw OutputExists(c.output_dir + " already holds a results bundle; use force to overwrite");
    }
    fs::create_directories(c.output_dir);
    fs::create_directories(c.output_dir + "/checkpoints");

    auto [train, test] = load_dataset(c);
    const StageSchedule schedule = schedule_of(c, train);

    {
        std::ofstream f(c.output_dir + "/config.json");
        json full = canonical_config_json(c);
        full["output_dir"] = c.output_dir;
        f << full.dump(2) << "\n";
        if (!f) throw IoError("cannot write config snapshot");
    }

    ResultsBundle bundle;
    bundle.fingerprint = fp;
    bundle.version = kVersion;
    bundle.seeds = c.seeds;

    std::ofstream metrics(c.output_dir + "/metrics.jsonl");
    if (!metrics) throw IoError("cannot write metrics stream");
    for (uint64_t seed : c.seeds) {
        TrainConfig tc = c.train;
        tc.arch_id = c.arch;
        tc.seed = seed;
        ExperimentResult result = run_experiment(train, test, schedule, tc, c.finetune,
                                                 c.memory_budget);
        write_step_records(metrics, seed, result.records);
        for (size_t t = 0; t < result.stage_experts.size(); ++t)
            save_archive(c.output_dir + "/checkpoints/seed" + std::to_string(seed) + "_stage" +
                             std::to_string(t + 1) + ".tkar",
                         model_to_archive(result.stage_experts[t]));
        save_archive(c.output_dir + "/checkpoints/seed" + std::to_string(seed) + "_memory.tkar",
                     memory_to_archive(result.final_memory));
        bundle.per_seed.push_back(std::move(result.reports));
    }

    std::ofstream f(c.output_dir + "/bundle.json");
    f << bundle_to_json(bundle).dump(2) << "\n";
    if (!f) throw IoError("cannot write bundle");
    return bundle;
}

GammaSweep gamma_sweep(const ExperimentConfig& c, const std::vector<double>& gammas, bool force) {
    if (gammas.empty()) throw ConfigInvalid("gamma sweep needs at least one value");
    GammaSweep sweep;
    sweep.gammas = gammas;
    for (double g : gammas) {
        ExperimentConfig cg = c;
        cg.train.loss_weights.gamma = g;
        cg.output_dir = c.output_dir + "/gamma_" + fmt_num(g);
        ResultsBundle b = run(cg, force);
        std::vector<double> row;
        const size_t stages = b.per_seed.at(0).size();
        for (size_t s = 0; s < stages; ++s) {
            std::vector<double> accs;
            for (const auto& runr : b.per_seed) accs.push_back(runr[s].task_accuracy);
            row.push_back(stats_of(accs).mean);
        }
        sweep.task_acc.push_back(std::move(row));
        sweep.bundles.push_back(std::move(b));
    }
    std::ofstream f(c.output_dir + "/gamma_grid.tsv");
    if (!f) throw IoError("cannot write gamma grid");
    f << "gamma";
    for (size_t s = 0; s < sweep.task_acc[0].size(); ++s) f << "\tS" << s + 1;
    f << "\n";
    for (size_t i = 0; i < gammas.size(); ++i) {
        f << fmt_num(gammas[i]);
        for (double v : sweep.task_acc[i]) f << "\t" << fmt_num(v);
        f << "\n";
    }
    return sweep;
}

std::vector<AblationRow> ablate(const ExperimentConfig& c,
                                const std::vector<std::string>& components, bool force) {
    if (components.empty()) throw ConfigInvalid("ablation needs at least one component");
    std::vector<AblationRow> rows;
    for (const std::string& name : components) {
        ExperimentConfig cc = c;
        cc.train.disable_kd = false;
        if (name == "kd") {
            cc.train.disable_gtk = true;
            cc.train.disable_averaging = true;
        } else if (name == "kd+avg") {
            cc.train.disable_gtk = true;
            cc.train.disable_averaging = false;
        } else if (name == "full") {
            cc.train.disable_gtk = false;
            cc.train.disable_averaging = false;
        } else {
            throw ConfigInvalid("unknown ablation component " + name +
                                " (expected kd, kd+avg or full)");
        }
        std::string dir_name = name;
        for (auto& ch : dir_name)
            if (ch == '+') ch = '_';
        cc.output_dir = c.output_dir + "/" + dir_name;
        AblationRow row;
        row.component = name;
        row.bundle = run(cc, force);
        std::vector<double> ta, ca;
        for (const auto& runr : row.bundle.per_seed) {
            ta.push_back(runr.back().task_accuracy);
            ca.push_back(runr.back().class_accuracy);
        }
        row.final_task_accuracy = stats_of(ta).mean;
        row.final_class_accuracy = stats_of(ca).mean;
        rows.push_back(std::move(row));
    }
    std::ofstream f(c.output_dir + "/ablation.tsv");
    if (!f) throw IoError("cannot write ablation table");
    f << "component\tfinal_task_accuracy\tfinal_class_accuracy\n";
    for (const auto& r : rows)
        f << r.component << "\t" << fmt_num(r.final_task_accuracy) << "\t"
          << fmt_num(r.final_class_accuracy) << "\n";
    return rows;
}

void report(const std::string& bundle_dir, std::ostream& os) {
    const ResultsBundle b = load_bundle(bundle_dir);
    if (b.per_seed.empty() || b.per_seed[0].empty())
        throw EmptyBundle(bundle_dir + " holds no stage reports");
    write_table_tsv(bundle_dir + "/table.tsv", b, &os);
    write_curves_svg(bundle_dir + "/curves.svg", b);
    os << "wrote " << bundle_dir << "/table.tsv and curves.svg\n";
}

} // namespace tkil
