#include "tkil/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tkil/errors.hpp"
#include "tkil/losses.hpp"
#include "tkil/optimizer.hpp"
#include "tkil/rng.hpp"

namespace tkil {

namespace {

double sigmoid_val(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<int64_t> iota_ids(int64_t lo, int64_t hi) {
    std::vector<int64_t> v(static_cast<size_t>(hi - lo));
    for (int64_t i = lo; i < hi; ++i) v[static_cast<size_t>(i - lo)] = i;
    return v;
}

} // namespace

TaskPrediction predict_task(const ModelState& base, const Tensor& x,
                            const StageSchedule& schedule, int tasks_learned) {
    if (x.ndim() < 1 || x.dim(0) == 0) throw EmptyBatch("task prediction needs samples");
    const Tensor logits = forward(base, x).second;
    const int B = logits.dim(0);
    const int cpt = schedule.classes_per_task;
    TaskPrediction out;
    out.scores.assign(static_cast<size_t>(tasks_learned), 0.0);
    for (int i = 0; i < B; ++i) {
        for (int t = 0; t < tasks_learned; ++t) {
            double best = -1.0;
            for (int c = t * cpt; c < (t + 1) * cpt; ++c)
                best = std::max(best, sigmoid_val(logits.data[static_cast<size_t>(i) *
                                                                  logits.dim(1) +
                                                              c]));
            out.scores[static_cast<size_t>(t)] += best;
        }
    }
    for (auto& s : out.scores) s /= static_cast<double>(B);
    out.predicted_task = 1;
    for (int t = 1; t < tasks_learned; ++t)
        if (out.scores[static_cast<size_t>(t)] > out.scores[static_cast<size_t>(out.predicted_task - 1)])
            out.predicted_task = t + 1;
    return out;
}

ModelState finetune_task_model(const ModelState& base, const ExemplarMemory& memory, int task,
                               const StageSchedule& schedule, const FinetuneConfig& config,
                               uint64_t seed) {
    DatasetHandle data = memory_task_data(memory, schedule, task); // MissingTaskExemplars
    ModelState model = clone(base);
    if (config.epochs == 0) return model;

    const int c0 = (task - 1) * schedule.classes_per_task;
    const int c1 = task * schedule.classes_per_task;
    std::vector<int> local_labels(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i)
        local_labels[static_cast<size_t>(i)] =
            schedule.column_of_class(data.labels[static_cast<size_t>(i)]) - c0;

    auto opt = make_optimizer(config.optimizer_id);
    const int bs = std::max(1, config.batch_size);
    std::vector<int64_t> order = iota_ids(0, data.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        auto rng = make_rng(mix_seed(seed, 0x66696e65ull, static_cast<uint64_t>(epoch)));
        shuffle_vec(order, rng);
        for (int64_t at = 0; at < data.size(); at += bs) {
            const int64_t end = std::min<int64_t>(at + bs, data.size());
            std::vector<int64_t> chunk(order.begin() + at, order.begin() + end);
            std::vector<int> labels;
            labels.reserve(chunk.size());
            for (int64_t id : chunk) labels.push_back(local_labels[static_cast<size_t>(id)]);
            auto fg = forward_graph(model, data.gather_batch(chunk));
            auto loss = class_loss_node(ad::slice_cols(fg.logits, c0, c1), labels);
            auto grads = ad::backward(loss, fg.params, false);
            std::map<std::string, Tensor> gmap;
            for (const auto& w : model.weights) {
                if (config.scope == "head_only" && w.is_phi) continue;
                auto it = grads.find(fg.by_name.at(w.name).get());
                if (it != grads.end()) gmap.emplace(w.name, it->second->value);
            }
            opt->step(model, gmap, config.lr);
        }
    }
    return model;
}

StageReport evaluate(const ModelState& base, const ExemplarMemory& memory,
                     const DatasetHandle& test, const StageSchedule& schedule, int stage,
                     const FinetuneConfig& config, int train_batch_size, uint64_t seed) {
    StageReport report;
    report.stage = stage;
    report.seen_classes = stage * schedule.classes_per_task;
    const int bs = config.eval_batch_size > 0 ? config.eval_batch_size
                                              : std::max(1, train_batch_size);
    const int cpt = schedule.classes_per_task;

    std::map<int, ModelState> finetuned;
    auto model_for_task = [&](int task) -> const ModelState& {
        auto it = finetuned.find(task);
        if (it == finetuned.end())
            it = finetuned
                     .emplace(task, finetune_task_model(base, memory, task, schedule, config,
                                                        mix_seed(seed, 0x6576616cull,
                                                                 static_cast<uint64_t>(task))))
                     .first;
        return it->second;
    };
    auto classify = [&](const ModelState& m, const Tensor& x, int task, std::vector<int>& out) {
        const Tensor logits = forward(m, x).second;
        const int C = logits.dim(1);
        out.clear();
        for (int i = 0; i < x.dim(0); ++i) {
            int best = (task - 1) * cpt;
            for (int c = best + 1; c < task * cpt; ++c)
                if (logits.data[static_cast<size_t>(i) * C + c] >
                    logits.data[static_cast<size_t>(i) * C + best])
                    best = c;
            out.push_back(schedule.class_of_column(best));
        }
    };

    int64_t total = 0, task_hits = 0, class_hits = 0, oracle_hits = 0;
    for (int task = 1; task <= stage; ++task) {
        DatasetHandle td = stage_data(test, schedule, task);
        int64_t t_total = 0, t_task_hits = 0, t_class_hits = 0;
        std::vector<int> pred;
        for (int64_t at = 0; at < td.size(); at += bs) {
            const auto ids = iota_ids(at, std::min<int64_t>(at + bs, td.size()));
            const Tensor x = td.gather_batch(ids);
            const TaskPrediction tp = predict_task(base, x, schedule, stage);
            const int64_t k = static_cast<int64_t>(ids.size());
            t_total += k;
            if (tp.predicted_task == task) t_task_hits += k;

            classify(model_for_task(tp.predicted_task), x, tp.predicted_task, pred);
            for (size_t i = 0; i < ids.size(); ++i)
                if (pred[i] == td.labels[static_cast<size_t>(ids[static_cast<size_t>(i)])])
                    ++t_class_hits;
            classify(model_for_task(task), x, task, pred);
            for (size_t i = 0; i < ids.size(); ++i)
                if (pred[i] == td.labels[static_cast<size_t>(ids[static_cast<size_t>(i)])])
                    ++oracle_hits;
        }
        total += t_total;
        task_hits += t_task_hits;
        class_hits += t_class_hits;
        StageReport::PerTask pt;
        pt.task = task;
        pt.count = static_cast<int>(t_total);
        pt.task_accuracy = t_total ? static_cast<double>(t_task_hits) / t_total : 0.0;
        pt.class_accuracy = t_total ? static_cast<double>(t_class_hits) / t_total : 0.0;
        report.per_task.push_back(pt);
    }
    report.task_accuracy = total ? static_cast<double>(task_hits) / total : 0.0;
    report.class_accuracy = total ? static_cast<double>(class_hits) / total : 0.0;
    report.oracle_class_accuracy = total ? static_cast<double>(oracle_hits) / total : 0.0;
    return report;
}

} // namespace tkil
