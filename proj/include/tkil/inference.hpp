#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tkil/dataset.hpp"
#include "tkil/memory.hpp"
#include "tkil/model.hpp"

namespace tkil {

struct FinetuneConfig {
    int epochs = 5;
    double lr = 0.001;
    std::string scope = "full_model"; // or "head_only"
    int batch_size = 32;
    std::string optimizer_id = "radam";
    int eval_batch_size = 0; // 0 = use the training batch size
};

struct TaskPrediction {
    int predicted_task = 1;
    std::vector<double> scores; // one per learned task
};

struct StageReport {
    int stage = 0;
    int seen_classes = 0;
    double task_accuracy = 0.0;
    double class_accuracy = 0.0;
    double oracle_class_accuracy = 0.0; // classify with the true task's model
    double avg_incremental_accuracy = 0.0;
    struct PerTask {
        int task = 0;
        int count = 0;
        double task_accuracy = 0.0;
        double class_accuracy = 0.0;
    };
    std::vector<PerTask> per_task;
};

// Scores each learned task by the batch mean of its block's maximum sigmoid
// probability; ties break to the lowest task index. The batch is assumed to
// come from one (unknown) task.
TaskPrediction predict_task(const ModelState& base, const Tensor& x,
                            const StageSchedule& schedule, int tasks_learned);

// Copy of base trained on the task's memory exemplars with the class loss
// restricted to that task's logit block. The base model is never mutated.
ModelState finetune_task_model(const ModelState& base, const ExemplarMemory& memory, int task,
                               const StageSchedule& schedule, const FinetuneConfig& config,
                               uint64_t seed);

// Full test pass over all tasks seen through `stage`: per batch, predict the
// task, classify with a model finetuned to the predicted task (cached per
// task), and also record the oracle variant that uses the true task.
// avg_incremental_accuracy is left at 0 for the caller to fill.
StageReport evaluate(const ModelState& base, const ExemplarMemory& memory,
                     const DatasetHandle& test, const StageSchedule& schedule, int stage,
                     const FinetuneConfig& config, int train_batch_size, uint64_t seed);

} // namespace tkil
