#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "tkil/archive.hpp"
#include "tkil/dataset.hpp"

namespace tkil {

// Fixed-budget buffer of past-task exemplars, rebalanced to an equal per-class
// quota every time new classes arrive.
struct ExemplarMemory {
    int64_t budget = 2000;
    std::vector<int> input_shape;
    std::map<int, std::vector<std::vector<double>>> store; // class id -> samples

    int64_t total() const;
    std::vector<int> classes() const;
    bool empty() const { return store.empty(); }
};

ExemplarMemory update_memory(const ExemplarMemory& memory, const DatasetHandle& new_task_data,
                             uint64_t seed);

// Mini-batch drawn uniformly from memory plus the current task's data,
// partitioned by the task that owns each sample's class.
struct GroupedBatch {
    struct Group {
        int task = 0;
        Tensor inputs; // [k, *input_shape]
        std::vector<int> labels;
    };
    std::vector<Group> groups; // ascending task index
    int64_t total = 0;
};

GroupedBatch sample_batch(const ExemplarMemory& memory, const DatasetHandle& current,
                          const StageSchedule& schedule, int batch_size, uint64_t seed,
                          int64_t step);

// Exemplars of one class/task as a plain dataset (used by inference finetuning).
DatasetHandle memory_task_data(const ExemplarMemory& memory, const StageSchedule& schedule,
                               int task);

Archive memory_to_archive(const ExemplarMemory& memory);
ExemplarMemory memory_from_archive(const Archive& a);

} // namespace tkil
