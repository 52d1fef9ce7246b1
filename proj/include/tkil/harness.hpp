#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "tkil/inference.hpp"
#include "tkil/trainer.hpp"

namespace tkil {

struct ExperimentConfig {
    nlohmann::json dataset; // {"type": "digits"|"blobs"|"idx"|"dir", ...}
    std::string arch = "cnn:1x16x16";
    int num_tasks = 5;
    bool shuffle_classes = false;
    uint64_t schedule_seed = 0;
    TrainConfig train;       // seed and arch_id filled per run
    FinetuneConfig finetune;
    int64_t memory_budget = 2000;
    std::vector<uint64_t> seeds;
    std::string output_dir;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Canonical form excludes the output directory: moving results elsewhere is
// not a semantic change.
nlohmann::json canonical_config_json(const ExperimentConfig& c);
uint64_t config_fingerprint(const ExperimentConfig& c);

std::pair<DatasetHandle, DatasetHandle> load_dataset(const ExperimentConfig& c);
StageSchedule schedule_of(const ExperimentConfig& c, const DatasetHandle& train);

struct ResultsBundle {
    uint64_t fingerprint = 0;
    std::string version;
    std::vector<uint64_t> seeds;
    std::vector<std::vector<StageReport>> per_seed;
};

nlohmann::json bundle_to_json(const ResultsBundle& b);
ResultsBundle bundle_from_json(const nlohmann::json& j);
ResultsBundle load_bundle(const std::string& dir);

// Executes run_experiment for every seed and persists config, checkpoints,
// memory snapshots, step records (jsonl) and the results bundle under
// output_dir. Refuses to overwrite a completed run unless forced.
ResultsBundle run(const ExperimentConfig& c, bool force = false);

struct GammaSweep {
    std::vector<double> gammas;
    // task_acc[row][stage-1] = mean over seeds of per-stage task accuracy
    std::vector<std::vector<double>> task_acc;
    std::vector<ResultsBundle> bundles;
};

GammaSweep gamma_sweep(const ExperimentConfig& c, const std::vector<double>& gammas,
                       bool force = false);

struct AblationRow {
    std::string component; // "kd", "kd+avg", "full"
    double final_task_accuracy = 0.0;
    double final_class_accuracy = 0.0;
    ResultsBundle bundle;
};

std::vector<AblationRow> ablate(const ExperimentConfig& c,
                                const std::vector<std::string>& components, bool force = false);

// Renders the per-stage table (tsv + stdout) and accuracy curves (svg) from a
// bundle directory.
void report(const std::string& bundle_dir, std::ostream& os);

} // namespace tkil
