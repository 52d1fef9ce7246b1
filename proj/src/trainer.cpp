#include "tkil/trainer.hpp"

#include <cmath>

#include "tkil/errors.hpp"
#include "tkil/optimizer.hpp"
#include "tkil/rng.hpp"

namespace tkil {

namespace {

LossWeights effective_weights(const TrainConfig& config) {
    LossWeights w = config.loss_weights;
    if (config.disable_kd) w.beta = 0.0;
    if (config.disable_gtk) w.gamma = 0.0;
    return w;
}

std::vector<int> column_labels(const StageSchedule& schedule, const std::vector<int>& labels) {
    std::vector<int> cols;
    cols.reserve(labels.size());
    for (int l : labels) cols.push_back(schedule.column_of_class(l));
    return cols;
}

std::map<std::string, Tensor> gradient_map(const ModelState& m, const ForwardGraph& fg,
                                           const ad::GradMap& grads) {
    std::map<std::string, Tensor> out;
    for (const auto& w : m.weights) {
        auto it = grads.find(fg.by_name.at(w.name).get());
        if (it != grads.end()) out.emplace(w.name, it->second->value);
    }
    return out;
}

// Single model, one step on the group-size-weighted sum of per-group losses.
// This is the "KD" ablation protocol (no clones, no averaging).
ModelState train_minibatch_single(const StageState& state, const GroupedBatch& batch,
                                  const TrainConfig& config, double lr, StepRecord* record,
                                  Optimizer* opt) {
    const LossWeights w = effective_weights(config);
    ModelState model = state.current_model;
    const ModelState* teacher = state.teacher_model ? &*state.teacher_model : nullptr;
    std::map<std::string, Tensor> acc;
    for (const auto& group : batch.groups) {
        const bool is_current = group.task == state.stage_index;
        const double share =
            static_cast<double>(group.labels.size()) / static_cast<double>(batch.total);
        CombinedLoss cl = build_combined_loss(model, teacher, group.inputs,
                                              column_labels(state.schedule, group.labels), w,
                                              is_current);
        auto grads = ad::backward(cl.total, cl.graph.params, false);
        for (auto& [name, g] : gradient_map(model, cl.graph, grads)) {
            auto it = acc.find(name);
            if (it == acc.end()) {
                Tensor scaled = g;
                for (auto& v : scaled.data) v *= share;
                acc.emplace(name, std::move(scaled));
            } else {
                for (size_t i = 0; i < g.data.size(); ++i)
                    it->second.data[i] += share * g.data[i];
            }
        }
        if (record)
            record->groups.push_back({group.task, static_cast<int>(group.labels.size()), cl.terms});
    }
    opt->step(model, acc, lr);
    return model;
}

ModelState train_minibatch_impl(const StageState& state, const GroupedBatch& batch,
                                const TrainConfig& config, double lr, StepRecord* record,
                                Optimizer* persistent) {
    if (batch.groups.empty()) throw EmptySource("empty mini-batch");
    if (config.disable_averaging) {
        std::unique_ptr<Optimizer> local;
        if (!persistent) local = make_optimizer(config.optimizer_id);
        return train_minibatch_single(state, batch, config, lr, record,
                                      persistent ? persistent : local.get());
    }

    const LossWeights w = effective_weights(config);
    const ModelState* teacher = state.teacher_model ? &*state.teacher_model : nullptr;
    std::vector<ModelState> trained;
    std::vector<bool> task_trained(static_cast<size_t>(state.stage_index) + 1, false);
    for (const auto& group : batch.groups) {
        const bool is_current = group.task == state.stage_index;
        ModelState task_model = clone(state.current_model);
        auto opt = make_optimizer(config.optimizer_id); // fresh state per clone
        const auto labels = column_labels(state.schedule, group.labels);
        for (int s = 0; s < config.inner_steps_per_group; ++s) {
            CombinedLoss cl =
                build_combined_loss(task_model, teacher, group.inputs, labels, w, is_current);
            auto grads = ad::backward(cl.total, cl.graph.params, false);
            opt->step(task_model, gradient_map(task_model, cl.graph, grads), lr);
            if (record && s == 0)
                record->groups.push_back(
                    {group.task, static_cast<int>(group.labels.size()), cl.terms});
        }
        if (group.task <= state.stage_index) task_trained[static_cast<size_t>(group.task)] = true;
        trained.push_back(std::move(task_model));
    }
    if (config.average_includes_untrained_clones)
        for (int t = 1; t <= state.stage_index; ++t)
            if (!task_trained[static_cast<size_t>(t)])
                trained.push_back(clone(state.current_model));
    return average_weights(trained);
}

} // namespace

ModelState train_minibatch(const StageState& state, const GroupedBatch& batch,
                           const TrainConfig& config, double lr, StepRecord* record) {
    return train_minibatch_impl(state, batch, config, lr, record, nullptr);
}

std::pair<ModelState, std::vector<StepRecord>> train_stage(StageState& state,
                                                           const DatasetHandle& stage_train,
                                                           const TrainConfig& config) {
    if (config.epochs < 0 || config.batch_size <= 0 || config.lr_initial <= 0.0 ||
        config.lr_decay_every <= 0 || config.lr_decay_factor <= 0.0 ||
        config.lr_decay_factor > 1.0 || config.inner_steps_per_group <= 0)
        throw ConfigInvalid("bad training configuration");

    const int64_t pool = state.memory.total() + stage_train.size();
    if (pool == 0) throw EmptySource("no training data for this stage");
    const int64_t steps_per_epoch = (pool + config.batch_size - 1) / config.batch_size;
    const uint64_t batch_seed =
        mix_seed(config.seed, 0x7374616765ull, static_cast<uint64_t>(state.stage_index));

    std::unique_ptr<Optimizer> persistent;
    if (config.disable_averaging) persistent = make_optimizer(config.optimizer_id);

    std::vector<StepRecord> records;
    int64_t global_step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr =
            config.lr_initial * std::pow(config.lr_decay_factor,
                                         static_cast<double>((epoch - 1) / config.lr_decay_every));
        for (int64_t s = 0; s < steps_per_epoch; ++s, ++global_step) {
            GroupedBatch batch = sample_batch(state.memory, stage_train, state.schedule,
                                              config.batch_size, batch_seed, global_step);
            StepRecord rec;
            rec.stage = state.stage_index;
            rec.epoch = epoch;
            rec.step = global_step;
            rec.lr = lr;
            state.current_model =
                train_minibatch_impl(state, batch, config, lr, &rec, persistent.get());
            records.push_back(std::move(rec));
        }
    }
    return {state.current_model, std::move(records)};
}

ExperimentResult run_experiment(const DatasetHandle& train, const DatasetHandle& test,
                                const StageSchedule& schedule, const TrainConfig& config,
                                const FinetuneConfig& finetune, int64_t memory_budget) {
    ExperimentResult result;
    ModelState model = make_model(config.arch_id, 0, config.seed);
    std::optional<ModelState> teacher;
    ExemplarMemory memory;
    memory.budget = memory_budget;

    double acc_sum = 0.0;
    const uint64_t grow_seed = mix_seed(config.seed, 0x67726f77ull);
    for (int t = 1; t <= schedule.num_tasks; ++t) {
        model = grow_head(model, schedule.classes_per_task, grow_seed);
        DatasetHandle stage_train = stage_data(train, schedule, t);

        StageState state;
        state.stage_index = t;
        state.current_model = std::move(model);
        state.teacher_model = teacher;
        state.memory = memory;
        state.schedule = schedule;
        auto [expert, records] = train_stage(state, stage_train, config);
        result.records.insert(result.records.end(), records.begin(), records.end());

        memory = update_memory(memory, stage_train,
                               mix_seed(config.seed, 0x6d656d6full, static_cast<uint64_t>(t)));

        StageReport report = evaluate(expert, memory, test, schedule, t, finetune,
                                      config.batch_size,
                                      mix_seed(config.seed, 0x7265706full, static_cast<uint64_t>(t)));
        acc_sum += report.class_accuracy;
        report.avg_incremental_accuracy = acc_sum / t;
        result.reports.push_back(report);

        teacher = expert;
        result.stage_experts.push_back(expert);
        model = std::move(expert);
    }
    result.final_memory = std::move(memory);
    return result;
}

} // namespace tkil
