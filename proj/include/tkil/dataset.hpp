#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tkil/tensor.hpp"

namespace tkil {

// Labeled classification dataset with fixed per-sample shape. Samples are
// stored flat, row per sample, so adapters and batch builders can memcpy.
struct DatasetHandle {
    std::string name;
    std::string split; // "train" or "test"
    std::vector<int> input_shape;
    std::vector<double> inputs; // size() * sample_numel() values
    std::vector<int> labels;
    int num_classes = 0;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    int64_t sample_numel() const { return Tensor::numel_of(input_shape); }
    const double* sample(int64_t i) const { return inputs.data() + i * sample_numel(); }

    void push_sample(const double* v, int label) {
        inputs.insert(inputs.end(), v, v + sample_numel());
        labels.push_back(label);
    }

    // batch tensor [k, *input_shape] for the given sample indices
    Tensor gather_batch(const std::vector<int64_t>& ids) const;
};

// Ordered partition of class ids into tasks 1..num_tasks.
struct StageSchedule {
    int num_tasks = 0;
    int classes_per_task = 0;
    std::vector<int> class_order;
    std::vector<int> task_of_class;            // class id -> task in [1..N]
    std::vector<std::vector<int>> task_classes; // task_classes[t-1] = sorted class ids

    int task_of(int cls) const;
    int total_classes() const { return num_tasks * classes_per_task; }

    // Head logit columns are blocked by task: task t owns columns
    // [(t-1)*classes_per_task, t*classes_per_task), each block listing the
    // task's classes in ascending class-id order.
    int column_of_class(int cls) const;
    int class_of_column(int col) const;
};

StageSchedule build_schedule(int total_classes, int num_tasks, uint64_t seed, bool shuffle);

// Samples of task t's classes only, original relative order preserved.
DatasetHandle stage_data(const DatasetHandle& dataset, const StageSchedule& schedule, int t);

// Gaussian clusters with pairwise mean distance >= separation.
DatasetHandle make_synthetic_blobs(int num_classes, int per_class, int dim, double separation,
                                   uint64_t seed);

} // namespace tkil
