#include "ocpl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ocpl/errors.hpp"
#include "ocpl/rng.hpp"

namespace ocpl {

namespace {

constexpr std::uint64_t kSaltTaskSplit = 0x7461736b;
constexpr std::uint64_t kSaltHoldout = 0x74657374;
constexpr std::uint64_t kSaltStageModel = 0x6d6f646c;
constexpr std::uint64_t kSaltStageTrain = 0x74726169;
constexpr std::uint64_t kSaltStageReplay = 0x72706c61;

}  // namespace

void TaskSchedule::validate() const {
    if (tasks.empty()) {
        throw std::invalid_argument("TaskSchedule: no tasks");
    }
    if (exemplars_per_class < 1) {
        throw std::invalid_argument("TaskSchedule: exemplars_per_class >= 1");
    }
    std::set<std::size_t> seen;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (tasks[t].empty()) {
            throw std::invalid_argument("TaskSchedule: task " +
                                        std::to_string(t) + " is empty");
        }
        for (std::size_t label : tasks[t]) {
            if (!seen.insert(label).second) {
                throw std::invalid_argument("TaskSchedule: class " +
                                            std::to_string(label) +
                                            " appears in two tasks");
            }
        }
    }
}

TaskSchedule split_tasks(const std::set<std::size_t>& class_labels,
                         std::size_t num_tasks, std::uint64_t seed) {
    if (num_tasks < 1) {
        throw std::invalid_argument("split_tasks: num_tasks must be >= 1");
    }
    if (class_labels.size() < num_tasks) {
        throw std::invalid_argument("split_tasks: only " +
                                    std::to_string(class_labels.size()) +
                                    " classes for " + std::to_string(num_tasks) +
                                    " tasks");
    }
    std::vector<std::size_t> shuffled(class_labels.begin(), class_labels.end());
    auto eng = make_engine(seed, kSaltTaskSplit);
    std::shuffle(shuffled.begin(), shuffled.end(), eng);

    TaskSchedule schedule;
    schedule.tasks.resize(num_tasks);
    const std::size_t base = shuffled.size() / num_tasks;
    const std::size_t extra = shuffled.size() % num_tasks;
    std::size_t pos = 0;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        const std::size_t take = base + (t < extra ? 1 : 0);
        for (std::size_t i = 0; i < take; ++i) {
            schedule.tasks[t].insert(shuffled[pos++]);
        }
    }
    schedule.validate();
    return schedule;
}

void ProtocolConfig::validate() const {
    train.validate();
    infer.validate();
    if (num_tasks < 1) {
        throw std::invalid_argument("ProtocolConfig: num_tasks must be >= 1");
    }
    if (exemplars_per_class < 1) {
        throw std::invalid_argument(
            "ProtocolConfig: exemplars_per_class must be >= 1");
    }
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw std::invalid_argument(
            "ProtocolConfig: holdout_fraction must be in (0, 1)");
    }
    if (!(exemplar_epoch_fraction > 0.0 && exemplar_epoch_fraction <= 1.0)) {
        throw std::invalid_argument(
            "ProtocolConfig: exemplar_epoch_fraction must be in (0, 1]");
    }
    if (!(exemplar_lr_scale > 0.0 && exemplar_lr_scale <= 1.0)) {
        throw std::invalid_argument(
            "ProtocolConfig: exemplar_lr_scale must be in (0, 1]");
    }
    if (!(stage_lr_scale > 0.0 && stage_lr_scale <= 1.0)) {
        throw std::invalid_argument(
            "ProtocolConfig: stage_lr_scale must be in (0, 1]");
    }
    if (model.input_dim == 0 || model.embed_dim == 0) {
        throw std::invalid_argument(
            "ProtocolConfig: model input_dim and embed_dim must be set");
    }
}

std::size_t StageState::internal_id(std::size_t original_label) const {
    for (std::size_t i = 0; i < known_labels.size(); ++i) {
        if (known_labels[i] == original_label) return i;
    }
    throw std::invalid_argument("StageState: label " +
                                std::to_string(original_label) + " is not known");
}

bool StageState::is_known(std::size_t original_label) const {
    return previously_known.count(original_label) ||
           currently_known.count(original_label);
}

void StageState::check_partition(const std::set<std::size_t>& all_classes) const {
    std::set<std::size_t> unioned;
    for (const auto* group : {&previously_known, &currently_known, &unknown}) {
        for (std::size_t label : *group) {
            if (!unioned.insert(label).second) {
                throw std::invalid_argument(
                    "StageState: class " + std::to_string(label) +
                    " appears in more than one group");
            }
        }
    }
    if (unioned != all_classes) {
        throw std::invalid_argument(
            "StageState: groups do not partition the class set");
    }
    if (known_labels.size() !=
        previously_known.size() + currently_known.size()) {
        throw std::invalid_argument(
            "StageState: known_labels out of sync with the known sets");
    }
}

namespace {

// Remaps original labels to the model's contiguous ids.
FeatureDataset to_internal(const FeatureDataset& data, const StageState& state) {
    FeatureDataset out;
    out.feature_dim = data.feature_dim;
    for (const Sample& s : data.samples) {
        out.add(s.feature, state.internal_id(s.label));
    }
    return out;
}

// Per original class, the up-to-`count` samples with smallest D_e to their
// class center under the current parameters; ties break toward earlier
// samples.
std::map<std::size_t, std::vector<Vec>> select_exemplars(
    const ModelParams& params, const StageState& state,
    const FeatureDataset& train_data, std::size_t count) {
    const std::size_t d = params.embed_dim();
    std::map<std::size_t, std::vector<std::pair<double, std::size_t>>> ranked;
    for (std::size_t i = 0; i < train_data.samples.size(); ++i) {
        const Sample& s = train_data.samples[i];
        const ForwardResult fwd = forward(params, s.feature);
        const double de = euclidean_sq_scaled(
            fwd.embedding,
            params.protos.centers.row(state.internal_id(s.label)), d);
        ranked[s.label].push_back({de, i});
    }
    std::map<std::size_t, std::vector<Vec>> store;
    for (auto& [label, entries] : ranked) {
        std::sort(entries.begin(), entries.end());
        const std::size_t take = std::min(count, entries.size());
        std::vector<Vec>& dst = store[label];
        dst.reserve(take);
        for (std::size_t i = 0; i < take; ++i) {
            dst.push_back(train_data.samples[entries[i].second].feature);
        }
    }
    return store;
}

}  // namespace

StageState run_stage(StageState state, const std::set<std::size_t>& task_classes,
                     const FeatureDataset& train_data,
                     const ProtocolConfig& cfg) {
    cfg.validate();
    if (task_classes.empty()) {
        throw std::invalid_argument("run_stage: empty task");
    }
    for (std::size_t label : task_classes) {
        if (state.is_known(label)) {
            throw std::invalid_argument("run_stage: class " +
                                        std::to_string(label) +
                                        " was already trained");
        }
    }
    for (std::size_t label : train_data.class_labels) {
        if (!task_classes.count(label)) {
            throw std::invalid_argument(
                "run_stage: training data contains label " +
                std::to_string(label) + " outside the current task");
        }
    }
    for (std::size_t label : task_classes) {
        if (!train_data.class_labels.count(label)) {
            throw std::invalid_argument("run_stage: no training data for class " +
                                        std::to_string(label));
        }
    }

    const std::size_t stage = state.stage_index;

    // Advance the class bookkeeping before touching the model.
    state.previously_known.insert(state.currently_known.begin(),
                                  state.currently_known.end());
    state.currently_known = task_classes;
    for (std::size_t label : task_classes) {
        state.unknown.erase(label);
        state.known_labels.push_back(label);
    }

    if (stage == 0) {
        ModelConfig mc = cfg.model;
        mc.num_classes = task_classes.size();
        mc.proto_mode = cfg.train.proto_mode;
        mc.alpha = cfg.train.alpha;
        state.params = make_model(mc, mix_seed(cfg.seed, kSaltStageModel));
        state.params.protos = init_prototypes(
            mc.num_classes, mc.embed_dim, mc.proto_mode,
            mix_seed(cfg.seed, kSaltStageModel));
    } else {
        grow_model(state.params, task_classes.size(),
                   mix_seed(cfg.seed, kSaltStageModel + stage));
    }

    TrainConfig stage_cfg = cfg.train;
    stage_cfg.seed = mix_seed(cfg.seed, kSaltStageTrain + stage);
    if (stage > 0) {
        stage_cfg.learning_rate *= cfg.stage_lr_scale;
    }
    TrainResult trained =
        train(std::move(state.params), to_internal(train_data, state), stage_cfg);
    state.params = std::move(trained.params);

    // Pick this task's exemplars with the freshly trained embedding, then
    // replay them together with the stored ones at a gentler learning rate.
    std::map<std::size_t, std::vector<Vec>> current_exemplars = select_exemplars(
        state.params, state, train_data, cfg.exemplars_per_class);

    if (cfg.exemplar_finetune) {
        FeatureDataset replay;
        replay.feature_dim = train_data.feature_dim;
        for (const auto& [label, features] : state.exemplar_store) {
            for (const Vec& f : features) {
                replay.add(f, state.internal_id(label));
            }
        }
        for (const auto& [label, features] : current_exemplars) {
            for (const Vec& f : features) {
                replay.add(f, state.internal_id(label));
            }
        }
        TrainConfig replay_cfg = cfg.train;
        replay_cfg.epochs = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(
                   cfg.exemplar_epoch_fraction *
                   static_cast<double>(cfg.train.epochs))));
        replay_cfg.learning_rate *= cfg.exemplar_lr_scale;
        replay_cfg.warmup_epochs = 0;
        replay_cfg.seed = mix_seed(cfg.seed, kSaltStageReplay + stage);
        TrainResult replayed =
            train(std::move(state.params), replay, replay_cfg);
        state.params = std::move(replayed.params);
    }

    for (auto& [label, features] : current_exemplars) {
        state.exemplar_store[label] = std::move(features);
    }

    state.stage_index = stage + 1;
    return state;
}

StageEvaluation evaluate_stage(const StageState& state,
                               const FeatureDataset& test_data,
                               const InferenceConfig& infer_cfg) {
    infer_cfg.validate();
    if (test_data.samples.empty()) {
        throw std::invalid_argument("evaluate_stage: empty test set");
    }

    StageEvaluation eval;
    eval.dump.reserve(test_data.samples.size());
    FeatureDataset known_subset;
    known_subset.feature_dim = test_data.feature_dim;

    for (std::size_t i = 0; i < test_data.samples.size(); ++i) {
        const Sample& s = test_data.samples[i];
        const Prediction pred = infer(state.params, s.feature, infer_cfg);

        DumpRow row;
        row.sample_id = i;
        if (state.is_known(s.label)) {
            const std::size_t internal = state.internal_id(s.label);
            row.true_label = static_cast<std::int64_t>(internal);
            known_subset.add(s.feature, internal);
        } else {
            row.true_label = kUnknownLabel;
        }
        row.decision = pred.decision;
        row.top_known_class = pred.known_class;
        row.top_known_posterior = pred.proto_posterior[pred.known_class];
        row.max_class_score =
            *std::max_element(pred.class_scores.begin(), pred.class_scores.end());
        eval.dump.push_back(row);
    }

    std::set<std::size_t> previous_ids;
    for (std::size_t label : state.previously_known) {
        previous_ids.insert(state.internal_id(label));
    }
    std::set<std::size_t> current_ids;
    for (std::size_t label : state.currently_known) {
        current_ids.insert(state.internal_id(label));
    }

    eval.report = make_report(eval.dump, state.known_labels.size(),
                              previous_ids, current_ids);
    if (!known_subset.samples.empty()) {
        const Compactness comp = compactness(state.params, known_subset);
        eval.report.mean_intra_de = comp.mean_intra_de;
        eval.report.mean_inter_center_dist = comp.mean_inter_center_dist;
    }
    eval.radius = state.params.protos.radius;
    return eval;
}

std::string stage_report_line(std::size_t stage, const StageEvaluation& eval) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["wi"] = opt(eval.report.wi);
    j["a_ose"] = eval.report.a_ose;
    j["ur"] = opt(eval.report.ur);
    j["acc_previous"] = opt(eval.report.acc_previous);
    j["acc_current"] = opt(eval.report.acc_current);
    j["acc_both"] = opt(eval.report.acc_both);
    j["radius"] = eval.radius;
    j["mean_intra_de"] = eval.report.mean_intra_de;
    return j.dump();
}

ProtocolResult run_protocol(const FeatureDataset& dataset,
                            const ProtocolConfig& cfg) {
    cfg.validate();
    dataset.validate();
    if (cfg.train.proto_mode == ProtoMode::FixedFinetuned &&
        cfg.model.embed_dim < dataset.class_labels.size()) {
        throw std::invalid_argument(
            "run_protocol: fixed-finetuned prototypes need embed_dim >= total "
            "class count (" + std::to_string(cfg.model.embed_dim) + " < " +
            std::to_string(dataset.class_labels.size()) + ")");
    }

    ProtocolResult result;
    result.schedule =
        split_tasks(dataset.class_labels, cfg.num_tasks, cfg.seed);
    result.schedule.exemplars_per_class = cfg.exemplars_per_class;

    auto [train_side, test_side] =
        holdout_split(dataset, cfg.holdout_fraction, mix_seed(cfg.seed,
                                                              kSaltHoldout));

    StageState state;
    state.unknown = dataset.class_labels;

    for (std::size_t t = 0; t < result.schedule.tasks.size(); ++t) {
        const std::set<std::size_t>& task = result.schedule.tasks[t];
        const FeatureDataset task_train = filter_by_labels(train_side, task);
        state = run_stage(std::move(state), task, task_train, cfg);
        state.check_partition(dataset.class_labels);
        result.stage_params.push_back(state.params);

        StageEvaluation eval = evaluate_stage(state, test_side, cfg.infer);
        result.jsonl += stage_report_line(t + 1, eval);
        result.jsonl += '\n';
        result.stages.push_back(std::move(eval));
    }
    result.final_state = std::move(state);
    return result;
}

}  // namespace ocpl
