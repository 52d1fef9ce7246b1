#include "tkil/dataset.hpp"

#include <algorithm>
#include <cstring>

#include "tkil/errors.hpp"
#include "tkil/rng.hpp"

namespace tkil {

Tensor DatasetHandle::gather_batch(const std::vector<int64_t>& ids) const {
    const int64_t sn = sample_numel();
    std::vector<int> shape;
    shape.push_back(static_cast<int>(ids.size()));
    shape.insert(shape.end(), input_shape.begin(), input_shape.end());
    Tensor out = Tensor::zeros(shape);
    for (size_t k = 0; k < ids.size(); ++k)
        std::memcpy(out.data.data() + static_cast<int64_t>(k) * sn, sample(ids[k]),
                    static_cast<size_t>(sn) * sizeof(double));
    return out;
}

int StageSchedule::task_of(int cls) const {
    if (cls < 0 || cls >= static_cast<int>(task_of_class.size()) || task_of_class[cls] < 1)
        throw LabelOutOfRange("class " + std::to_string(cls) + " is not scheduled");
    return task_of_class[static_cast<size_t>(cls)];
}

int StageSchedule::column_of_class(int cls) const {
    const int t = task_of(cls);
    const auto& block = task_classes[static_cast<size_t>(t - 1)];
    for (size_t i = 0; i < block.size(); ++i)
        if (block[i] == cls) return (t - 1) * classes_per_task + static_cast<int>(i);
    throw LabelOutOfRange("class " + std::to_string(cls) + " missing from its task block");
}

int StageSchedule::class_of_column(int col) const {
    if (col < 0 || col >= total_classes())
        throw LabelOutOfRange("column " + std::to_string(col) + " outside head");
    return task_classes[static_cast<size_t>(col / classes_per_task)]
                       [static_cast<size_t>(col % classes_per_task)];
}

StageSchedule build_schedule(int total_classes, int num_tasks, uint64_t seed, bool shuffle) {
    if (total_classes <= 0 || num_tasks <= 0)
        throw IndivisibleClasses("counts must be positive");
    if (total_classes % num_tasks != 0)
        throw IndivisibleClasses(std::to_string(total_classes) + " classes cannot split into " +
                                 std::to_string(num_tasks) + " equal tasks");
    StageSchedule s;
    s.num_tasks = num_tasks;
    s.classes_per_task = total_classes / num_tasks;
    s.class_order.resize(static_cast<size_t>(total_classes));
    for (int c = 0; c < total_classes; ++c) s.class_order[static_cast<size_t>(c)] = c;
    if (shuffle) {
        auto rng = make_rng(mix_seed(seed, 0x7363686564ull));
        shuffle_vec(s.class_order, rng);
    }
    s.task_of_class.assign(static_cast<size_t>(total_classes), -1);
    s.task_classes.assign(static_cast<size_t>(num_tasks), {});
    for (int i = 0; i < total_classes; ++i) {
        const int t = i / s.classes_per_task + 1;
        const int cls = s.class_order[static_cast<size_t>(i)];
        s.task_of_class[static_cast<size_t>(cls)] = t;
        s.task_classes[static_cast<size_t>(t - 1)].push_back(cls);
    }
    for (auto& v : s.task_classes) std::sort(v.begin(), v.end());
    return s;
}

DatasetHandle stage_data(const DatasetHandle& dataset, const StageSchedule& schedule, int t) {
    if (t < 1 || t > schedule.num_tasks)
        throw OutOfRangeTask("task " + std::to_string(t) + " outside [1.." +
                             std::to_string(schedule.num_tasks) + "]");
    DatasetHandle out;
    out.name = dataset.name + ":task" + std::to_string(t);
    out.split = dataset.split;
    out.input_shape = dataset.input_shape;
    out.num_classes = dataset.num_classes;
    for (int64_t i = 0; i < dataset.size(); ++i) {
        const int cls = dataset.labels[static_cast<size_t>(i)];
        if (cls < 0 || cls >= static_cast<int>(schedule.task_of_class.size())) continue;
        if (schedule.task_of_class[static_cast<size_t>(cls)] == t)
            out.push_sample(dataset.sample(i), cls);
    }
    return out;
}

DatasetHandle make_synthetic_blobs(int num_classes, int per_class, int dim, double separation,
                                   uint64_t seed) {
    if (num_classes <= 0 || per_class <= 0 || dim <= 0)
        throw ConfigInvalid("blob counts must be positive");
    // Mean for class c sits on axis c % dim at radius separation * (1 + c / dim):
    // same-axis means differ by >= separation, cross-axis pairs by more.
    std::vector<std::vector<double>> means(static_cast<size_t>(num_classes),
                                           std::vector<double>(static_cast<size_t>(dim), 0.0));
    for (int c = 0; c < num_classes; ++c)
        means[static_cast<size_t>(c)][static_cast<size_t>(c % dim)] =
            separation * (1.0 + static_cast<double>(c / dim));

    DatasetHandle out;
    out.name = "blobs";
    out.split = "train";
    out.input_shape = {dim};
    out.num_classes = num_classes;
    out.inputs.reserve(static_cast<size_t>(num_classes) * per_class * dim);
    std::vector<double> buf(static_cast<size_t>(dim));
    for (int c = 0; c < num_classes; ++c) {
        auto rng = make_rng(mix_seed(seed, 0x626c6f62ull, static_cast<uint64_t>(c)));
        for (int p = 0; p < per_class; ++p) {
            for (int j = 0; j < dim; ++j)
                buf[static_cast<size_t>(j)] =
                    means[static_cast<size_t>(c)][static_cast<size_t>(j)] + rand_gauss(rng);
            out.push_sample(buf.data(), c);
        }
    }
    return out;
}

} // namespace tkil
