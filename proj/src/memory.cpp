#include "tkil/memory.hpp"

#include <algorithm>
#include <set>

#include "tkil/errors.hpp"
#include "tkil/rng.hpp"

namespace tkil {

int64_t ExemplarMemory::total() const {
    int64_t n = 0;
    for (const auto& [cls, v] : store) n += static_cast<int64_t>(v.size());
    return n;
}

std::vector<int> ExemplarMemory::classes() const {
    std::vector<int> out;
    out.reserve(store.size());
    for (const auto& [cls, v] : store) out.push_back(cls);
    return out;
}

ExemplarMemory update_memory(const ExemplarMemory& memory, const DatasetHandle& new_task_data,
                             uint64_t seed) {
    std::set<int> new_classes(new_task_data.labels.begin(), new_task_data.labels.end());
    for (int cls : new_classes)
        if (memory.store.count(cls))
            throw ClassCollision("class " + std::to_string(cls) + " already stored");
    if (!memory.input_shape.empty() && !new_classes.empty() &&
        memory.input_shape != new_task_data.input_shape)
        throw ShapeMismatch("memory and new data disagree on sample shape");

    ExemplarMemory out;
    out.budget = memory.budget;
    out.input_shape = memory.input_shape.empty() ? new_task_data.input_shape : memory.input_shape;

    const int64_t class_total =
        static_cast<int64_t>(memory.store.size()) + static_cast<int64_t>(new_classes.size());
    if (class_total == 0) return out;
    const int64_t quota = memory.budget / class_total;

    // shrink existing classes to the quota, keeping a random subset
    for (const auto& [cls, samples] : memory.store) {
        const int64_t keep = std::min<int64_t>(quota, static_cast<int64_t>(samples.size()));
        auto rng = make_rng(mix_seed(seed, 0x6b656570ull, static_cast<uint64_t>(cls)));
        auto ids = sample_without_replacement(rng, static_cast<int64_t>(samples.size()), keep);
        std::sort(ids.begin(), ids.end());
        auto& dst = out.store[cls];
        dst.reserve(static_cast<size_t>(keep));
        for (int64_t i : ids) dst.push_back(samples[static_cast<size_t>(i)]);
    }
    // admit a random quota-sized subset of each new class
    const int64_t sn = new_task_data.sample_numel();
    for (int cls : new_classes) {
        std::vector<int64_t> owned;
        for (int64_t i = 0; i < new_task_data.size(); ++i)
            if (new_task_data.labels[static_cast<size_t>(i)] == cls) owned.push_back(i);
        const int64_t take = std::min<int64_t>(quota, static_cast<int64_t>(owned.size()));
        auto rng = make_rng(mix_seed(seed, 0x61646d69ull, static_cast<uint64_t>(cls)));
        auto picks = sample_without_replacement(rng, static_cast<int64_t>(owned.size()), take);
        std::sort(picks.begin(), picks.end());
        auto& dst = out.store[cls];
        dst.reserve(static_cast<size_t>(take));
        for (int64_t p : picks) {
            const double* s = new_task_data.sample(owned[static_cast<size_t>(p)]);
            dst.emplace_back(s, s + sn);
        }
    }
    return out;
}

GroupedBatch sample_batch(const ExemplarMemory& memory, const DatasetHandle& current,
                          const StageSchedule& schedule, int batch_size, uint64_t seed,
                          int64_t step) {
    // pooled view: (class, index-within-class) for memory, (-1, row) for current
    struct Ref {
        int cls;
        int64_t idx;
    };
    std::vector<Ref> pool;
    pool.reserve(static_cast<size_t>(memory.total() + current.size()));
    for (const auto& [cls, samples] : memory.store)
        for (size_t i = 0; i < samples.size(); ++i)
            pool.push_back({cls, static_cast<int64_t>(i)});
    for (int64_t i = 0; i < current.size(); ++i) pool.push_back({-1, i});
    if (pool.empty()) throw EmptySource("no samples available for batching");

    auto rng = make_rng(mix_seed(seed, 0x6261746368ull, static_cast<uint64_t>(step)));
    auto picks = sample_without_replacement(rng, static_cast<int64_t>(pool.size()),
                                            std::min<int64_t>(batch_size,
                                                              static_cast<int64_t>(pool.size())));

    const std::vector<int>& shape =
        memory.store.empty() ? current.input_shape : memory.input_shape;
    const int64_t sn = Tensor::numel_of(shape);
    std::map<int, std::pair<std::vector<double>, std::vector<int>>> by_task;
    for (int64_t p : picks) {
        const Ref& r = pool[static_cast<size_t>(p)];
        const double* src;
        int label;
        if (r.cls < 0) {
            src = current.sample(r.idx);
            label = current.labels[static_cast<size_t>(r.idx)];
        } else {
            src = memory.store.at(r.cls)[static_cast<size_t>(r.idx)].data();
            label = r.cls;
        }
        auto& [vals, labels] = by_task[schedule.task_of(label)];
        vals.insert(vals.end(), src, src + sn);
        labels.push_back(label);
    }

    GroupedBatch out;
    for (auto& [task, data] : by_task) {
        GroupedBatch::Group g;
        g.task = task;
        g.labels = std::move(data.second);
        std::vector<int> gshape;
        gshape.push_back(static_cast<int>(g.labels.size()));
        gshape.insert(gshape.end(), shape.begin(), shape.end());
        g.inputs = Tensor(gshape, std::move(data.first));
        out.total += static_cast<int64_t>(g.labels.size());
        out.groups.push_back(std::move(g));
    }
    return out;
}

DatasetHandle memory_task_data(const ExemplarMemory& memory, const StageSchedule& schedule,
                               int task) {
    DatasetHandle out;
    out.name = "memory:task" + std::to_string(task);
    out.split = "memory";
    out.input_shape = memory.input_shape;
    out.num_classes = schedule.total_classes();
    for (const auto& [cls, samples] : memory.store) {
        if (schedule.task_of(cls) != task) continue;
        for (const auto& s : samples) out.push_sample(s.data(), cls);
    }
    if (out.size() == 0)
        throw MissingTaskExemplars("memory holds no exemplars of task " + std::to_string(task));
    return out;
}

Archive memory_to_archive(const ExemplarMemory& memory) {
    Archive a;
    a.ints["budget"] = memory.budget;
    a.ints["num_classes"] = static_cast<int64_t>(memory.store.size());
    Tensor shape_t = Tensor::zeros({static_cast<int>(memory.input_shape.size())});
    for (size_t i = 0; i < memory.input_shape.size(); ++i)
        shape_t.data[i] = memory.input_shape[i];
    a.arrays["input_shape"] = shape_t;
    for (const auto& [cls, samples] : memory.store) {
        const int64_t sn = Tensor::numel_of(memory.input_shape);
        std::vector<int> shape;
        shape.push_back(static_cast<int>(samples.size()));
        shape.insert(shape.end(), memory.input_shape.begin(), memory.input_shape.end());
        Tensor t = Tensor::zeros(shape);
        for (size_t i = 0; i < samples.size(); ++i)
            std::copy(samples[i].begin(), samples[i].end(),
                      t.data.begin() + static_cast<int64_t>(i) * sn);
        a.arrays["class_" + std::to_string(cls)] = std::move(t);
    }
    return a;
}

ExemplarMemory memory_from_archive(const Archive& a) {
    ExemplarMemory m;
    m.budget = a.integer("budget");
    const Tensor& shape_t = a.array("input_shape");
    for (double v : shape_t.data) m.input_shape.push_back(static_cast<int>(v));
    const int64_t sn = Tensor::numel_of(m.input_shape);
    for (const auto& [name, t] : a.arrays) {
        if (name.rfind("class_", 0) != 0) continue;
        const int cls = std::stoi(name.substr(6));
        auto& dst = m.store[cls];
        const int64_t count = t.shape.empty() ? 0 : t.shape[0];
        for (int64_t i = 0; i < count; ++i)
            dst.emplace_back(t.data.begin() + i * sn, t.data.begin() + (i + 1) * sn);
    }
    return m;
}

} // namespace tkil
