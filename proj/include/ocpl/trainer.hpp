#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocpl/data.hpp"
#include "ocpl/losses.hpp"
#include "ocpl/model.hpp"

namespace ocpl {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double lambda = kDefaultLambda;
    double alpha = kDefaultAlpha;
    ProtoMode proto_mode = ProtoMode::FixedFinetuned;
    std::size_t finetune_period_epochs = 10;
    double finetune_momentum = 0.5;  // blend factor toward the class means
    std::size_t warmup_epochs = 20;  // epochs before the first center fine-tune
    bool freeze_extractor = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double dce = 0.0;       // epoch means over training batches
    double osr = 0.0;
    double cls = 0.0;
    double radius = 0.0;         // after the epoch's updates
    double mean_intra_de = 0.0;  // measured on the training set post-epoch
    double accuracy = 0.0;       // macro per-class accuracy, prototype argmax
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    std::string to_csv() const;  // columns: epoch,dce,osr,cls,radius,mean_intra_de,accuracy
};

/// Fixed-finetuned mode: one-hot basis centers (requires d >= K). Learnable
/// mode: seeded Gaussian centers, std 0.1. Radius starts at 0 in both.
PrototypeSet init_prototypes(std::size_t num_classes, std::size_t dim,
                             ProtoMode mode, std::uint64_t seed = 0);

struct ClassMeans {
    Mat means;                        // K x d; zero rows for empty classes
    std::vector<std::size_t> counts;  // per-class sample counts
};

/// Per-class arithmetic means of the prototype-branch embeddings under the
/// current parameters. Classes absent from the dataset get count 0.
ClassMeans compute_class_means(const ModelParams& params,
                               const FeatureDataset& dataset);

/// C^k <- (1 - m) * C^k + m * mean_k for classes with at least one sample;
/// empty classes keep their center. Fixed-finetuned mode only.
PrototypeSet finetune_prototypes(const PrototypeSet& protos,
                                 const ClassMeans& class_means, double m);

struct TrainResult {
    ModelParams params;
    TrainLog log;
};

/// Seeded mini-batch SGD with momentum on classifier cross entropy plus the
/// prototype loss. The radius is projected back to 0 whenever a step
/// overshoots below it. In fixed-finetuned mode the centers are nudged toward
/// the class means every finetune_period_epochs epochs once warmup has
/// passed. Bitwise deterministic for a given (params, dataset, config).
TrainResult train(ModelParams params, const FeatureDataset& dataset,
                  const TrainConfig& cfg);

/// Fraction of samples whose embedding satisfies D_e(f, C^label) <= slack * R.
double containment_fraction(const ModelParams& params,
                            const FeatureDataset& dataset, double slack = 1.1);

}  // namespace ocpl
