#include "ocpl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ocpl/errors.hpp"
#include "ocpl/io_util.hpp"
#include "ocpl/rng.hpp"

namespace ocpl {

namespace {

constexpr std::uint64_t kSaltShuffle = 0x73687566;
constexpr std::uint64_t kSaltProtoInit = 0x70726f74;

void check_labels_in_range(const FeatureDataset& dataset,
                           std::size_t num_classes, const char* op) {
    for (std::size_t label : dataset.class_labels) {
        if (label >= num_classes) {
            throw std::invalid_argument(std::string(op) + ": dataset label " +
                                        std::to_string(label) +
                                        " outside model range [0, " +
                                        std::to_string(num_classes) + ")");
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) {
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    }
    if (lambda < 0.0) {
        throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    }
    if (!(alpha > 0.0)) {
        throw std::invalid_argument("TrainConfig: alpha must be > 0");
    }
    if (finetune_period_epochs < 1) {
        throw std::invalid_argument(
            "TrainConfig: finetune_period_epochs must be >= 1");
    }
    if (!(finetune_momentum >= 0.0 && finetune_momentum <= 1.0)) {
        throw std::invalid_argument(
            "TrainConfig: finetune_momentum must be in [0, 1]");
    }
    if (warmup_epochs >= epochs) {
        throw std::invalid_argument(
            "TrainConfig: warmup_epochs must be < epochs");
    }
}

std::string TrainLog::to_csv() const {
    std::string out = "epoch,dce,osr,cls,radius,mean_intra_de,accuracy\n";
    for (const EpochRecord& r : epochs) {
        out += std::to_string(r.epoch);
        for (double v : {r.dce, r.osr, r.cls, r.radius, r.mean_intra_de,
                         r.accuracy}) {
            out += ',';
            out += format_g17(v);
        }
        out += '\n';
    }
    return out;
}

PrototypeSet init_prototypes(std::size_t num_classes, std::size_t dim,
                             ProtoMode mode, std::uint64_t seed) {
    if (num_classes < 1 || dim < 1) {
        throw std::invalid_argument("init_prototypes: counts must be >= 1");
    }
    PrototypeSet protos;
    protos.mode = mode;
    protos.radius = 0.0;
    protos.centers = Mat(num_classes, dim);
    if (mode == ProtoMode::FixedFinetuned) {
        if (dim < num_classes) {
            throw std::invalid_argument(
                "init_prototypes: fixed-finetuned mode needs dim >= num_classes, "
                "got " + std::to_string(dim) + " < " +
                std::to_string(num_classes));
        }
        for (std::size_t k = 0; k < num_classes; ++k) protos.centers(k, k) = 1.0;
    } else {
        auto eng = make_engine(seed, kSaltProtoInit);
        std::normal_distribution<double> dist(0.0, 0.1);
        for (double& v : protos.centers.data) v = dist(eng);
    }
    return protos;
}

ClassMeans compute_class_means(const ModelParams& params,
                               const FeatureDataset& dataset) {
    if (dataset.samples.empty()) {
        throw std::invalid_argument("compute_class_means: empty dataset");
    }
    const std::size_t num_classes = params.num_classes();
    check_labels_in_range(dataset, num_classes, "compute_class_means");

    ClassMeans result;
    result.means = Mat(num_classes, params.embed_dim());
    result.counts.assign(num_classes, 0);
    for (const Sample& s : dataset.samples) {
        const ForwardResult fwd = forward(params, s.feature);
        auto row = result.means.row(s.label);
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += fwd.embedding[i];
        ++result.counts[s.label];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (result.counts[k] == 0) continue;
        auto row = result.means.row(k);
        const double inv = 1.0 / static_cast<double>(result.counts[k]);
        for (double& v : row) v *= inv;
    }
    return result;
}

PrototypeSet finetune_prototypes(const PrototypeSet& protos,
                                 const ClassMeans& class_means, double m) {
    if (protos.mode != ProtoMode::FixedFinetuned) {
        throw std::invalid_argument(
            "finetune_prototypes: only fixed-finetuned prototypes are "
            "periodically re-centered");
    }
    if (!(m >= 0.0 && m <= 1.0)) {
        throw std::invalid_argument("finetune_prototypes: m must be in [0, 1]");
    }
    if (!protos.centers.same_shape(class_means.means) ||
        class_means.counts.size() != protos.num_classes()) {
        throw std::invalid_argument("finetune_prototypes: shape mismatch");
    }
    PrototypeSet out = protos;
    for (std::size_t k = 0; k < protos.num_classes(); ++k) {
        if (class_means.counts[k] == 0) continue;  // no evidence, keep center
        auto dst = out.centers.row(k);
        const auto src = protos.centers.row(k);
        const auto mean = class_means.means.row(k);
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = (1.0 - m) * src[i] + m * mean[i];
        }
    }
    return out;
}

namespace {

struct EpochStats {
    double mean_intra_de = 0.0;
    double accuracy = 0.0;
};

// Post-epoch measurement pass: mean D_e to the true-class center and macro
// per-class accuracy of the prototype-posterior argmax.
EpochStats measure_epoch(const ModelParams& params,
                         const FeatureDataset& dataset) {
    const std::size_t num_classes = params.num_classes();
    const std::size_t d = params.embed_dim();
    double de_sum = 0.0;
    std::vector<std::size_t> per_class_total(num_classes, 0);
    std::vector<std::size_t> per_class_correct(num_classes, 0);

    for (const Sample& s : dataset.samples) {
        const ForwardResult fwd = forward(params, s.feature);
        de_sum += euclidean_sq_scaled(fwd.embedding,
                                      params.protos.centers.row(s.label), d);
        double best = 0.0;
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < num_classes; ++k) {
            const double dist =
                proto_distance(fwd.embedding, params.protos.centers.row(k), d);
            if (k == 0 || -dist > best) {
                best = -dist;
                best_k = k;
            }
        }
        ++per_class_total[s.label];
        if (best_k == s.label) ++per_class_correct[s.label];
    }

    EpochStats stats;
    stats.mean_intra_de = de_sum / static_cast<double>(dataset.samples.size());
    double acc_sum = 0.0;
    std::size_t acc_classes = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (per_class_total[k] == 0) continue;
        acc_sum += static_cast<double>(per_class_correct[k]) /
                   static_cast<double>(per_class_total[k]);
        ++acc_classes;
    }
    stats.accuracy = acc_classes == 0 ? 0.0
                                      : acc_sum / static_cast<double>(acc_classes);
    return stats;
}

[[noreturn]] void diverged(std::size_t epoch, std::size_t batch,
                           const std::string& component) {
    throw NumericError("training diverged: non-finite " + component +
                       " at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch));
}

}  // namespace

TrainResult train(ModelParams params, const FeatureDataset& dataset,
                  const TrainConfig& cfg) {
    cfg.validate();
    params.validate();
    dataset.validate();
    if (dataset.samples.empty()) {
        throw std::invalid_argument("train: empty dataset");
    }
    check_labels_in_range(dataset, params.num_classes(), "train");
    if (params.protos.mode != cfg.proto_mode) {
        throw std::invalid_argument(
            "train: cfg.proto_mode disagrees with the model's prototype mode");
    }
    if (params.alpha != cfg.alpha) {
        params.alpha = cfg.alpha;
    }

    const std::size_t n = dataset.samples.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_eng = make_engine(cfg.seed, kSaltShuffle);

    // Momentum state is indexed, not pointer-based: center fine-tuning swaps
    // the prototype buffer between epochs but never changes any shape.
    std::vector<double> velocity(collect_parameters(params,
                                                    !cfg.freeze_extractor)
                                     .size(),
                                 0.0);

    BackwardOptions opts;
    opts.lambda = cfg.lambda;
    opts.freeze_extractor = cfg.freeze_extractor;

    TrainResult result;
    result.log.epochs.reserve(cfg.epochs);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_eng);

        double dce_sum = 0.0, osr_sum = 0.0, cls_sum = 0.0;
        for (std::size_t start = 0, batch_idx = 0; start < n;
             start += cfg.batch_size, ++batch_idx) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            const double inv_batch = 1.0 / static_cast<double>(end - start);

            ModelGradients acc = make_zero_gradients(params);
            std::vector<double*> acc_ptrs =
                collect_gradients(acc, params.protos.mode, !cfg.freeze_extractor);
            double batch_dce = 0.0, batch_osr = 0.0, batch_cls = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = dataset.samples[order[i]];
                // A runaway parameter scale can turn distances or logits
                // non-finite mid-epoch; fold that into the same diagnostic as
                // a non-finite batch loss.
                BackwardResult bw;
                try {
                    bw = backward(params, s.feature, s.label, opts);
                } catch (const NumericError& e) {
                    diverged(epoch, batch_idx, e.what());
                } catch (const std::invalid_argument& e) {
                    diverged(epoch, batch_idx, e.what());
                }
                batch_dce += bw.breakdown.dce;
                batch_osr += bw.breakdown.osr;
                batch_cls += bw.breakdown.cls;
                std::vector<double*> sample_ptrs = collect_gradients(
                    bw.grads, params.protos.mode, !cfg.freeze_extractor);
                for (std::size_t p = 0; p < acc_ptrs.size(); ++p) {
                    *acc_ptrs[p] += *sample_ptrs[p];
                }
            }
            if (!std::isfinite(batch_dce)) diverged(epoch, batch_idx, "dce loss");
            if (!std::isfinite(batch_osr)) diverged(epoch, batch_idx, "osr loss");
            if (!std::isfinite(batch_cls)) diverged(epoch, batch_idx, "cls loss");
            dce_sum += batch_dce;
            osr_sum += batch_osr;
            cls_sum += batch_cls;

            std::vector<double*> param_ptrs =
                collect_parameters(params, !cfg.freeze_extractor);
            for (std::size_t p = 0; p < param_ptrs.size(); ++p) {
                const double g = *acc_ptrs[p] * inv_batch;
                velocity[p] = cfg.momentum * velocity[p] + g;
                *param_ptrs[p] -= cfg.learning_rate * velocity[p];
            }
            if (params.protos.radius < 0.0) params.protos.radius = 0.0;
        }

        for (const DenseLayer& layer : params.extractor_layers) {
            if (!all_finite(layer.weight.data) || !all_finite(layer.bias)) {
                diverged(epoch, 0, "extractor parameters");
            }
        }
        if (!all_finite(params.embed_proj.data) ||
            !all_finite(params.classifier_weights.data) ||
            !all_finite(params.protos.centers.data) ||
            !std::isfinite(params.protos.radius)) {
            diverged(epoch, 0, "head parameters");
        }

        // Parameters can stay finite while embeddings or distances overflow,
        // so the fine-tune pass and epoch statistics get the same divergence
        // treatment as the batch loop.
        try {
            if (cfg.proto_mode == ProtoMode::FixedFinetuned &&
                epoch > cfg.warmup_epochs &&
                (epoch - cfg.warmup_epochs) % cfg.finetune_period_epochs == 0) {
                const ClassMeans means = compute_class_means(params, dataset);
                params.protos = finetune_prototypes(params.protos, means,
                                                    cfg.finetune_momentum);
            }

            const EpochStats stats = measure_epoch(params, dataset);
            EpochRecord rec;
            rec.epoch = epoch;
            rec.dce = dce_sum / static_cast<double>(n);
            rec.osr = osr_sum / static_cast<double>(n);
            rec.cls = cls_sum / static_cast<double>(n);
            rec.radius = params.protos.radius;
            rec.mean_intra_de = stats.mean_intra_de;
            rec.accuracy = stats.accuracy;
            result.log.epochs.push_back(rec);
        } catch (const std::invalid_argument& e) {
            diverged(epoch, 0, e.what());
        }
    }

    result.params = std::move(params);
    return result;
}

double containment_fraction(const ModelParams& params,
                            const FeatureDataset& dataset, double slack) {
    if (dataset.samples.empty()) {
        throw std::invalid_argument("containment_fraction: empty dataset");
    }
    check_labels_in_range(dataset, params.num_classes(), "containment_fraction");
    const std::size_t d = params.embed_dim();
    std::size_t inside = 0;
    for (const Sample& s : dataset.samples) {
        const ForwardResult fwd = forward(params, s.feature);
        const double de = euclidean_sq_scaled(
            fwd.embedding, params.protos.centers.row(s.label), d);
        if (de <= slack * params.protos.radius) ++inside;
    }
    return static_cast<double>(inside) /
           static_cast<double>(dataset.samples.size());
}

}  // namespace ocpl
