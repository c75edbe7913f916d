#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "ocpl/core_math.hpp"

namespace ocpl {

enum class ProtoMode { FixedFinetuned, Learnable };
enum class ClassifierKind { Cosine, InnerProduct };

// One center per class plus the shared hypersphere radius. In fixed-finetuned
// mode the centers start at one-hot basis vectors and only move through the
// trainer's periodic fine-tune step; in learnable mode they receive gradients.
struct PrototypeSet {
    Mat centers;  // num_classes x dim
    double radius = 0.0;
    ProtoMode mode = ProtoMode::FixedFinetuned;

    std::size_t num_classes() const { return centers.rows; }
    std::size_t dim() const { return centers.cols; }
    void validate() const;  // radius >= 0, finite centers, d >= K in fixed mode
};

struct LossBreakdown {
    double dce = 0.0;
    double osr = 0.0;
    double cls = 0.0;
    double lambda = 0.0;
    double total = 0.0;  // cls + dce + lambda * osr
};

// Backpropagation carrier for the per-sample losses. Only the groups a loss
// touches are sized; the rest stay empty.
struct GradientBundle {
    Vec wrt_embedding;           // d, prototype-branch input
    Mat wrt_centers;             // K x d, zeros in fixed-finetuned mode
    double wrt_radius = 0.0;
    Mat wrt_classifier_weights;  // K x C
    Vec wrt_feature;             // C, classifier input
};

struct LossResult {
    double value = 0.0;
    GradientBundle grad;
    bool clamped = false;  // posterior underflowed and the log was floored
};

// Posterior values below this are floored before the log so a pathological
// configuration yields a large finite loss plus the clamped flag instead of inf.
inline constexpr double kPosteriorFloor = 1e-30;
inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kDefaultAlpha = 16.0;

/// Distance-based cross entropy: -log softmax(-D)_label over the prototype
/// distances D_k = proto_distance(f, C^k, d). Gradients flow into f, and into
/// the centers when the set is learnable.
LossResult dce_loss(std::span<const double> f, std::size_t label,
                    const PrototypeSet& protos);

/// Open-space-risk hinge max{0, D_e(f, C^label) - R}. At D_e == R the
/// subgradient 0 is chosen, so the hinge counts as inactive on the boundary.
LossResult osr_loss(std::span<const double> f, std::size_t label,
                    const PrototypeSet& protos);

struct ProtoLossResult {
    LossBreakdown breakdown;  // dce/osr/total filled, cls left at 0
    GradientBundle grad;
    bool clamped = false;
};

/// dce + lambda * osr with summed gradients. lambda == 0 reproduces dce_loss
/// bitwise.
ProtoLossResult proto_loss(std::span<const double> f, std::size_t label,
                           const PrototypeSet& protos,
                           double lambda = kDefaultLambda);

/// Cross entropy over scaled per-class similarity logits. Cosine kind uses
/// logit_k = alpha * cos(feature, w_k); InnerProduct swaps in the raw dot
/// product logit_k = dot(feature, w_k) as the ablation baseline.
LossResult classifier_ce_loss(std::span<const double> feature, std::size_t label,
                              const Mat& weights, double alpha,
                              ClassifierKind kind = ClassifierKind::Cosine);

inline LossResult cosine_ce_loss(std::span<const double> feature,
                                 std::size_t label, const Mat& weights,
                                 double alpha) {
    return classifier_ce_loss(feature, label, weights, alpha,
                              ClassifierKind::Cosine);
}

struct GradCheckReport {
    std::string op;
    std::size_t trials = 0;
    double step = 0.0;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    std::string worst_group;
    bool pass = false;
};

/// Compares analytic gradients of one loss op against central finite
/// differences over randomized small configurations (d, K in [2, 8]). op_id is
/// "dce_loss", "osr_loss" or "cosine_ce_loss".
GradCheckReport gradcheck(std::string_view op_id, std::size_t trials,
                          double step, double tolerance, std::uint64_t seed);

/// |a - b| / max(|a|, |b|, 1e-8), the relative error used by every gradient
/// check in the project.
double gradcheck_rel_error(double a, double b);

}  // namespace ocpl
