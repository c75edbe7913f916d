#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocpl/data.hpp"
#include "ocpl/model.hpp"

namespace ocpl {

// (K+1) x (K+2) count matrix. Rows: true known classes 0..K-1 plus the
// unknown ground truth (row K). Columns: predicted classes 0..K-1, predicted
// unknown (column K), filtered by the score threshold (column K+1).
struct ConfusionMatrix {
    std::size_t num_known = 0;
    std::vector<std::size_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t k)
        : num_known(k), counts((k + 1) * (k + 2), 0) {}

    std::size_t rows() const { return num_known + 1; }
    std::size_t cols() const { return num_known + 2; }
    std::size_t unknown_row() const { return num_known; }
    std::size_t unknown_col() const { return num_known; }
    std::size_t filtered_col() const { return num_known + 1; }

    std::size_t& at(std::size_t r, std::size_t c) { return counts[r * cols() + c]; }
    std::size_t at(std::size_t r, std::size_t c) const {
        return counts[r * cols() + c];
    }
    std::size_t row_sum(std::size_t r) const;
    std::size_t total() const;
};

inline constexpr std::int64_t kUnknownLabel = -1;

// One evaluated sample. true_label is the contiguous class id, or -1 for
// unknown ground truth. top_known_class/posterior refer to the prototype
// posterior argmax and are filled for every row, including filtered ones.
struct DumpRow {
    std::size_t sample_id = 0;
    std::int64_t true_label = kUnknownLabel;
    Decision decision = Decision::Filtered;
    std::size_t top_known_class = 0;
    double top_known_posterior = 0.0;
    double max_class_score = 0.0;
};

using PredictionDump = std::vector<DumpRow>;

std::string decision_name(Decision d);
Decision decision_from_name(const std::string& name);

/// CSV columns: sample_id,true_label,decision,top_known_class,
/// top_known_posterior,max_class_score. Floats at 17 significant digits.
std::string dump_to_csv(const PredictionDump& dump);
PredictionDump dump_from_csv_text(const std::string& text,
                                  const std::string& origin = "<string>");
void save_dump(const PredictionDump& dump, const std::string& path);
PredictionDump load_dump(const std::string& path);

ConfusionMatrix build_confusion(const PredictionDump& dump,
                                std::size_t num_known);

/// Unknown-row unknown-column count over the unfiltered unknown total; absent
/// when no unknown sample survives the filter.
std::optional<double> unknown_recall(const ConfusionMatrix& confusion);

/// Count of unknown-ground-truth samples assigned to any known class.
std::size_t a_ose(const ConfusionMatrix& confusion);

/// P_closed / P_open - 1, where each P is the precision of known-class
/// decisions in its pass (a known-class decision on an unknown sample is a
/// false positive). Absent when either pass makes no known-class decision or
/// P_open is 0.
std::optional<double> wildness_impact(const PredictionDump& closed,
                                      const PredictionDump& open);

/// The rows of `dump` whose ground truth is a known class — the closed-set
/// pass reused by wildness_impact.
PredictionDump known_true_subset(const PredictionDump& dump);

struct GroupedAccuracy {
    std::optional<double> previous;
    std::optional<double> current;
    std::optional<double> both;
};

/// Macro (per-class mean) recall over each class group, with filtered samples
/// excluded from the denominators. Empty groups and classes with no
/// unfiltered samples are skipped; a group with nothing left is absent.
GroupedAccuracy grouped_accuracy(const ConfusionMatrix& confusion,
                                 const std::set<std::size_t>& previous,
                                 const std::set<std::size_t>& current);

struct Compactness {
    double mean_intra_de = 0.0;
    double mean_inter_center_dist = 0.0;
};

/// Mean D_e from each embedding to its class center, and the mean scaled
/// squared distance over unordered center pairs (0 when K == 1). Dataset
/// labels must be contiguous class ids of `params`.
Compactness compactness(const ModelParams& params, const FeatureDataset& dataset);

/// Re-applies the xi threshold to a dump: filtered rows stay filtered, other
/// rows become known(top class) when top_known_posterior >= xi, else unknown.
PredictionDump rethreshold(const PredictionDump& dump, double xi);

struct MetricsReport {
    std::optional<double> ur;
    std::optional<double> wi;
    std::size_t a_ose = 0;
    std::optional<double> acc_previous;
    std::optional<double> acc_current;
    std::optional<double> acc_both;
    double mean_intra_de = 0.0;
    double mean_inter_center_dist = 0.0;
    ConfusionMatrix confusion;
};

/// Assembles every dump-derived metric; compactness fields are left at 0 for
/// the caller, since they need model parameters.
MetricsReport make_report(const PredictionDump& dump, std::size_t num_known,
                          const std::set<std::size_t>& previous,
                          const std::set<std::size_t>& current);

nlohmann::ordered_json report_to_json(const MetricsReport& report);

}  // namespace ocpl
