#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocpl/metrics.hpp"
#include "ocpl/run_config.hpp"

namespace ocpl {

/// Largest xi among the posteriors observed in the known-only validation dump
/// (and the values one ulp above them) whose rethresholded dump keeps macro
/// accuracy at least target_acc plus one binomial standard error; 0 when no
/// candidate qualifies. A larger xi rejects more aggressively, so this picks
/// the most unknown-sensitive operating point that still honors the accuracy
/// floor, with the standard-error margin buffering validation-split noise.
double select_xi(const PredictionDump& validation_dump, std::size_t num_known,
                 double target_acc = 0.90);

struct OpenSetResult {
    double xi = 0.0;                 // selected on the known-only validation split
    std::optional<double> known_acc; // macro accuracy on known test samples
    std::optional<double> ur;
    std::size_t a_ose = 0;
    std::optional<double> wi;
    double mean_intra_de = 0.0;
    ModelParams params;
    PredictionDump dump;             // open-set test dump at the selected xi
};

/// One open-set run: generate known+unknown blob classes, train on the known
/// training split, pick xi on a known-only validation split, then evaluate on
/// known test samples mixed with every unknown-class sample. The cell knobs
/// (prototype mode, hinge weight, classifier kind) override cfg.train's.
OpenSetResult run_open_set_experiment(const RunConfig& cfg, std::uint64_t seed,
                                      ProtoMode mode, double lambda,
                                      ClassifierKind kind);

struct AblationCell {
    std::string name;  // row label built from the module flags
    ProtoMode mode = ProtoMode::FixedFinetuned;
    bool esc = false;  // hinge loss on (lambda > 0)
    bool csc = false;  // cosine classifier (else inner product)
};

/// The six studied configurations: learnable x {none, esc, csc} and
/// fixed x {none, esc, esc+csc}.
std::vector<AblationCell> ablation_grid();

struct AblationCellResult {
    AblationCell cell;
    std::vector<double> xi;        // per seed
    std::vector<double> known_acc;
    std::vector<double> ur;
    std::vector<double> a_ose;
    std::vector<std::optional<double>> wi;
    std::vector<double> mean_intra_de;
    // True where training aborted on a non-finite loss; such runs score
    // known_acc 0, UR 0, and infinite mean intra-class distance.
    std::vector<bool> diverged;
};

struct AblationResult {
    std::vector<AblationCellResult> cells;
    std::vector<std::uint64_t> seeds;
};

/// Runs every grid cell over cfg.ablation_seeds paired seeds.
AblationResult run_ablation(const RunConfig& cfg);

double mean_of(const std::vector<double>& v);
double sample_std_of(const std::vector<double>& v);
double median_of(std::vector<double> v);

nlohmann::ordered_json ablation_to_json(const AblationResult& result);
/// mean +/- std table, one row per cell:
/// cell,proto_mode,esc,csc,wi_mean,wi_std,a_ose_mean,a_ose_std,acc_mean,
/// acc_std,ur_mean,ur_std,ur_median,intra_de_mean,intra_de_std
std::string ablation_to_csv(const AblationResult& result);

struct IncrementalPairing {
    std::vector<std::uint64_t> seeds;
    std::vector<double> acc_prev_with;     // stage-2 accuracy on stage-1 classes
    std::vector<double> acc_prev_without;
    std::size_t wins = 0;  // seeds where replay strictly improves it
};

/// Paired 2-stage protocol runs, exemplar replay on vs off, same seed per
/// pair. cfg.num_tasks should be 2 for the Table-1-style comparison.
IncrementalPairing run_incremental_pairing(const RunConfig& cfg,
                                           std::size_t num_seeds);

}  // namespace ocpl
