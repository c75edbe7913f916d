#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocpl/core_math.hpp"
#include "ocpl/losses.hpp"

namespace ocpl {

enum class Activation : std::uint8_t { None = 0, LeakyRelu = 1 };

inline constexpr double kLeakySlope = 0.01;

struct DenseLayer {
    Mat weight;  // out x in
    Vec bias;    // out
    Activation activation = Activation::LeakyRelu;

    std::size_t in_dim() const { return weight.cols; }
    std::size_t out_dim() const { return weight.rows; }
};

// Feed-forward trunk with two parallel heads: a linear projection to the
// prototype embedding space and a per-class similarity classifier.
struct ModelParams {
    std::vector<DenseLayer> extractor_layers;
    Mat embed_proj;          // d x C  (C = extractor output dim)
    Mat classifier_weights;  // K x C
    double alpha = kDefaultAlpha;
    ClassifierKind classifier_kind = ClassifierKind::Cosine;
    PrototypeSet protos;

    std::size_t input_dim() const {
        return extractor_layers.empty() ? embed_proj.cols
                                        : extractor_layers.front().in_dim();
    }
    std::size_t feature_dim() const { return embed_proj.cols; }
    std::size_t embed_dim() const { return embed_proj.rows; }
    std::size_t num_classes() const { return classifier_weights.rows; }

    void validate() const;  // shape chain + finiteness + proto invariants
};

struct ModelConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;  // may be empty (identity trunk)
    std::size_t embed_dim = 0;
    std::size_t num_classes = 0;
    double alpha = kDefaultAlpha;
    ClassifierKind classifier_kind = ClassifierKind::Cosine;
    ProtoMode proto_mode = ProtoMode::FixedFinetuned;
};

/// Seeded Gaussian initialization: trunk weights std sqrt(2/fan_in), embedding
/// projection std sqrt(1/fan_in), classifier rows std 0.1, biases zero.
/// Prototypes come from init_prototypes (trainer).
ModelParams make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Appends `new_classes` classes in place: classifier rows drawn with std 1e-3
/// (so existing argmax decisions are untouched at first), prototype centers on
/// the next unused one-hot axes in fixed-finetuned mode or Gaussian std 0.1 in
/// learnable mode. Throws when fixed-finetuned mode runs out of axes.
void grow_model(ModelParams& params, std::size_t new_classes, std::uint64_t seed);

struct ForwardResult {
    std::vector<Vec> preactivations;  // one per extractor layer
    std::vector<Vec> activations;     // one per extractor layer
    Vec feature;                      // trunk output (== input when no layers)
    Vec embedding;                    // embed_proj * feature
    Vec logits;                       // per-class similarity logits
};

ForwardResult forward(const ModelParams& params, std::span<const double> input);

struct ModelGradients {
    std::vector<Mat> layer_weights;
    std::vector<Vec> layer_biases;
    Mat embed_proj;
    Mat classifier_weights;
    Mat centers;
    double radius = 0.0;
};

struct BackwardOptions {
    double lambda = kDefaultLambda;
    bool freeze_extractor = false;
};

struct BackwardResult {
    LossBreakdown breakdown;
    ModelGradients grads;
    bool clamped = false;
};

/// Gradients of classifier cross entropy + prototype loss (dce + lambda*osr)
/// with respect to every parameter group, chained through the trunk.
BackwardResult backward(const ModelParams& params, std::span<const double> input,
                        std::size_t label, const BackwardOptions& opts = {});

struct InferenceConfig {
    double gamma = 0.05;  // classification-score filter
    double xi = 0.5;      // prototype-posterior acceptance threshold

    void validate() const;  // both in [0, 1]
};

enum class Decision : std::uint8_t { Known = 0, Unknown = 1, Filtered = 2 };

struct Prediction {
    Decision decision = Decision::Filtered;
    std::size_t known_class = 0;  // argmax of proto_posterior (valid unless filtered)
    Vec class_scores;             // softmax over classifier logits
    Vec proto_posterior;          // softmax over negated prototype distances
    Vec embedding;
};

/// Two-threshold open-set rule: filter when max class score < gamma; otherwise
/// accept argmax-posterior class j when posterior_j >= xi, else unknown.
Prediction infer(const ModelParams& params, std::span<const double> input,
                 const InferenceConfig& cfg);

/// Binary parameter file: magic "OCPL", version u32, then shape headers and
/// row-major little-endian float64 payloads per group. Round-trip bit-exact.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

/// Flat views over the trainable scalars, in a fixed order shared by the
/// optimizer and the end-to-end finite-difference check. Centers are included
/// only in learnable mode; the radius is always trainable. The views are
/// invalidated by any reshape (growth).
std::vector<double*> collect_parameters(ModelParams& params,
                                        bool include_extractor = true);
std::vector<double*> collect_gradients(ModelGradients& grads,
                                       ProtoMode mode,
                                       bool include_extractor = true);

ModelGradients make_zero_gradients(const ModelParams& params);

/// End-to-end finite-difference check of backward() over randomized small
/// models (trunk depth 0-2, dims in [2, 8], both prototype modes).
GradCheckReport gradcheck_backward(std::size_t trials, double step,
                                   double tolerance, std::uint64_t seed);

}  // namespace ocpl
