#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tkil/dataset.hpp"
#include "tkil/inference.hpp"
#include "tkil/losses.hpp"
#include "tkil/memory.hpp"
#include "tkil/model.hpp"

namespace tkil {

struct TrainConfig {
    std::string arch_id = "mlp:2:16";
    int epochs = 70;
    int batch_size = 128;
    double lr_initial = 0.01;
    int lr_decay_every = 20;
    double lr_decay_factor = 0.1;
    int inner_steps_per_group = 1;
    LossWeights loss_weights;
    uint64_t seed = 0;
    std::string optimizer_id = "radam";
    bool disable_kd = false;
    bool disable_gtk = false;
    bool disable_averaging = false;
    // also average unmodified clones of tasks absent from the batch, which
    // dampens each update by groups/t
    bool average_includes_untrained_clones = false;
};

struct StepRecord {
    int stage = 0;
    int epoch = 0;
    int64_t step = 0;
    double lr = 0.0;
    struct GroupRecord {
        int task = 0;
        int count = 0;
        LossTerms terms;
    };
    std::vector<GroupRecord> groups;
};

struct StageState {
    int stage_index = 1;
    ModelState current_model;
    std::optional<ModelState> teacher_model; // absent only at stage 1
    ExemplarMemory memory;
    StageSchedule schedule;
};

// One pass of the per-batch algorithm: clone the current model per task group,
// take inner steps on each clone (class loss on the current task's group,
// class+kd+gtk on memory groups), then average the trained clones.
ModelState train_minibatch(const StageState& state, const GroupedBatch& batch,
                           const TrainConfig& config, double lr, StepRecord* record = nullptr);

// Epoch loop over randomly composed batches with stepwise lr decay. Updates
// state.current_model in place and also returns it.
std::pair<ModelState, std::vector<StepRecord>> train_stage(StageState& state,
                                                           const DatasetHandle& stage_train,
                                                           const TrainConfig& config);

struct ExperimentResult {
    std::vector<StageReport> reports;
    std::vector<StepRecord> records;
    std::vector<ModelState> stage_experts;
    ExemplarMemory final_memory;
};

// Full incremental run: per stage grow the head, train, fold the stage's data
// into memory, evaluate over all seen classes. The stage-t expert becomes the
// teacher for stage t+1.
ExperimentResult run_experiment(const DatasetHandle& train, const DatasetHandle& test,
                                const StageSchedule& schedule, const TrainConfig& config,
                                const FinetuneConfig& finetune, int64_t memory_budget);

} // namespace tkil
