#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ocpl/data.hpp"
#include "ocpl/metrics.hpp"
#include "ocpl/model.hpp"
#include "ocpl/trainer.hpp"

namespace ocpl {

struct TaskSchedule {
    std::vector<std::set<std::size_t>> tasks;  // disjoint original class labels
    std::size_t exemplars_per_class = 50;

    void validate() const;  // disjointness, nonempty tasks, exemplars >= 1
};

/// Seeded equal-size (sizes differ by at most 1) partition of the class
/// labels into num_tasks ordered tasks.
TaskSchedule split_tasks(const std::set<std::size_t>& class_labels,
                         std::size_t num_tasks, std::uint64_t seed);

struct ProtocolConfig {
    ModelConfig model;   // num_classes/proto_mode/alpha are set per stage
    TrainConfig train;
    InferenceConfig infer;
    std::size_t num_tasks = 4;
    std::size_t exemplars_per_class = 50;
    double holdout_fraction = 0.25;       // test split carved out once, up front
    double exemplar_epoch_fraction = 0.2; // replay budget vs the stage budget
    double exemplar_lr_scale = 0.1;
    // Stages after the first start from a trained trunk whose embedding scale
    // has grown, which raises the curvature of the quadratic distance losses;
    // the base learning rate that was stable from scratch overshoots there, so
    // later stages train at this fraction of it.
    double stage_lr_scale = 0.2;
    bool exemplar_finetune = true;        // the Table-1 "+Finetuning" switch
    std::uint64_t seed = 0;

    void validate() const;
};

// Rolling state across stages. Class labels keep their original ids in the
// sets and the exemplar store; known_labels maps the model's contiguous class
// ids (assignment order) back to them.
struct StageState {
    std::size_t stage_index = 0;  // stages completed so far
    std::set<std::size_t> previously_known;
    std::set<std::size_t> currently_known;
    std::set<std::size_t> unknown;
    std::vector<std::size_t> known_labels;  // internal id -> original label
    std::map<std::size_t, std::vector<Vec>> exemplar_store;  // original label -> features
    ModelParams params;

    std::size_t internal_id(std::size_t original_label) const;
    bool is_known(std::size_t original_label) const;
    void check_partition(const std::set<std::size_t>& all_classes) const;
};

/// One incremental stage: grows the model for the task's classes (builds it
/// fresh on the first stage), trains on the task's data, replays stored plus
/// freshly selected exemplars at a reduced learning rate, and refreshes the
/// exemplar store. Exemplars are the samples closest to their class center by
/// D_e under the post-training parameters.
StageState run_stage(StageState state, const std::set<std::size_t>& task_classes,
                     const FeatureDataset& train_data, const ProtocolConfig& cfg);

struct StageEvaluation {
    MetricsReport report;
    PredictionDump dump;
    double radius = 0.0;
};

/// Evaluates every test sample, remapping labels of not-yet-known classes to
/// the unknown ground-truth marker. Compactness is measured on the known-true
/// subset of the test data.
StageEvaluation evaluate_stage(const StageState& state,
                               const FeatureDataset& test_data,
                               const InferenceConfig& infer_cfg);

/// One JSON-lines object (no trailing newline) with keys exactly:
/// stage, wi, a_ose, ur, acc_previous, acc_current, acc_both, radius,
/// mean_intra_de. Absent metrics serialize as null.
std::string stage_report_line(std::size_t stage, const StageEvaluation& eval);

struct ProtocolResult {
    TaskSchedule schedule;
    std::vector<StageEvaluation> stages;
    std::vector<ModelParams> stage_params;  // snapshot after each stage
    StageState final_state;
    std::string jsonl;  // all stage lines, newline-terminated
};

/// Full run: seeded task split, one up-front stratified train/test split,
/// then run_stage + evaluate_stage per task. Deterministic given cfg.seed.
ProtocolResult run_protocol(const FeatureDataset& dataset,
                            const ProtocolConfig& cfg);

}  // namespace ocpl
