#include "ocpl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include "ocpl/errors.hpp"
#include "ocpl/rng.hpp"

namespace ocpl {

void PrototypeSet::validate() const {
    if (radius < 0.0) {
        throw std::invalid_argument("PrototypeSet: radius must be >= 0");
    }
    if (!all_finite(centers.data)) {
        throw NumericError("PrototypeSet: non-finite center entry");
    }
    if (mode == ProtoMode::FixedFinetuned && dim() < num_classes()) {
        throw std::invalid_argument(
            "PrototypeSet: fixed-finetuned mode requires dim >= num_classes "
            "(one-hot initialization), got dim " + std::to_string(dim()) +
            " < " + std::to_string(num_classes()));
    }
}

namespace {

void check_label(std::size_t label, std::size_t num_classes, const char* op) {
    if (label >= num_classes) {
        throw std::invalid_argument(std::string(op) + ": label " +
                                    std::to_string(label) + " out of range [0, " +
                                    std::to_string(num_classes) + ")");
    }
}

}  // namespace

LossResult dce_loss(std::span<const double> f, std::size_t label,
                    const PrototypeSet& protos) {
    const std::size_t num_classes = protos.num_classes();
    const std::size_t dim = protos.dim();
    check_label(label, num_classes, "dce_loss");
    if (f.size() != dim) {
        throw std::invalid_argument("dce_loss: embedding dimension mismatch");
    }

    Vec distances(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        distances[k] = proto_distance(f, protos.centers.row(k), dim);
    }
    const Vec posterior = softmax_neg_distance(distances);

    LossResult result;
    result.clamped = posterior[label] < kPosteriorFloor;
    result.value = -std::log(std::max(posterior[label], kPosteriorFloor));

    // dL/dD_k = delta_kj - p_k; dD_k/df = (2/d)(f - C^k) - C^k.
    const double inv_dim2 = 2.0 / static_cast<double>(dim);
    result.grad.wrt_embedding.assign(dim, 0.0);
    result.grad.wrt_centers = Mat(num_classes, dim);
    const bool learnable = protos.mode == ProtoMode::Learnable;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double coeff = (k == label ? 1.0 : 0.0) - posterior[k];
        const auto center = protos.centers.row(k);
        for (std::size_t m = 0; m < dim; ++m) {
            result.grad.wrt_embedding[m] +=
                coeff * (inv_dim2 * (f[m] - center[m]) - center[m]);
            if (learnable) {
                result.grad.wrt_centers(k, m) =
                    coeff * (inv_dim2 * (center[m] - f[m]) - f[m]);
            }
        }
    }
    return result;
}

LossResult osr_loss(std::span<const double> f, std::size_t label,
                    const PrototypeSet& protos) {
    const std::size_t num_classes = protos.num_classes();
    const std::size_t dim = protos.dim();
    check_label(label, num_classes, "osr_loss");
    if (f.size() != dim) {
        throw std::invalid_argument("osr_loss: embedding dimension mismatch");
    }

    const auto center = protos.centers.row(label);
    const double de = euclidean_sq_scaled(f, center, dim);
    const bool active = de > protos.radius;

    LossResult result;
    result.grad.wrt_embedding.assign(dim, 0.0);
    result.grad.wrt_centers = Mat(num_classes, dim);
    if (!active) {
        return result;
    }

    result.value = de - protos.radius;
    result.grad.wrt_radius = -1.0;
    const double inv_dim2 = 2.0 / static_cast<double>(dim);
    const bool learnable = protos.mode == ProtoMode::Learnable;
    for (std::size_t m = 0; m < dim; ++m) {
        const double pull = inv_dim2 * (f[m] - center[m]);
        result.grad.wrt_embedding[m] = pull;
        if (learnable) {
            result.grad.wrt_centers(label, m) = -pull;
        }
    }
    return result;
}

ProtoLossResult proto_loss(std::span<const double> f, std::size_t label,
                           const PrototypeSet& protos, double lambda) {
    if (lambda < 0.0) {
        throw std::invalid_argument("proto_loss: lambda must be >= 0");
    }
    LossResult dce = dce_loss(f, label, protos);

    ProtoLossResult result;
    result.breakdown.lambda = lambda;
    result.breakdown.dce = dce.value;
    result.clamped = dce.clamped;
    result.grad = std::move(dce.grad);

    if (lambda == 0.0) {
        // Skip the weighted add entirely so the result matches dce_loss bitwise.
        result.breakdown.osr = osr_loss(f, label, protos).value;
        result.breakdown.total = result.breakdown.dce;
        return result;
    }

    LossResult osr = osr_loss(f, label, protos);
    result.breakdown.osr = osr.value;
    result.breakdown.total = result.breakdown.dce + lambda * osr.value;
    for (std::size_t m = 0; m < result.grad.wrt_embedding.size(); ++m) {
        result.grad.wrt_embedding[m] += lambda * osr.grad.wrt_embedding[m];
    }
    for (std::size_t i = 0; i < result.grad.wrt_centers.data.size(); ++i) {
        result.grad.wrt_centers.data[i] += lambda * osr.grad.wrt_centers.data[i];
    }
    result.grad.wrt_radius += lambda * osr.grad.wrt_radius;
    return result;
}

LossResult classifier_ce_loss(std::span<const double> feature, std::size_t label,
                              const Mat& weights, double alpha,
                              ClassifierKind kind) {
    const std::size_t num_classes = weights.rows;
    const std::size_t feat_dim = weights.cols;
    check_label(label, num_classes, "classifier_ce_loss");
    if (feature.size() != feat_dim) {
        throw std::invalid_argument("classifier_ce_loss: feature dimension mismatch");
    }
    if (alpha <= 0.0) {
        throw std::invalid_argument("classifier_ce_loss: alpha must be positive");
    }

    Vec logits(num_classes);
    double feat_norm = 0.0;
    if (kind == ClassifierKind::Cosine) {
        feat_norm = l2_norm(feature);
        if (feat_norm <= kNormEpsilon) {
            throw NumericError("classifier_ce_loss: degenerate feature (zero norm)");
        }
        for (std::size_t k = 0; k < num_classes; ++k) {
            logits[k] = alpha * cosine_similarity(feature, weights.row(k));
        }
    } else {
        for (std::size_t k = 0; k < num_classes; ++k) {
            logits[k] = dot_similarity(feature, weights.row(k));
        }
    }

    const Vec probs = softmax(logits);

    LossResult result;
    result.clamped = probs[label] < kPosteriorFloor;
    result.value = -std::log(std::max(probs[label], kPosteriorFloor));
    result.grad.wrt_feature.assign(feat_dim, 0.0);
    result.grad.wrt_classifier_weights = Mat(num_classes, feat_dim);

    for (std::size_t k = 0; k < num_classes; ++k) {
        const double coeff = probs[k] - (k == label ? 1.0 : 0.0);
        const auto w = weights.row(k);
        if (kind == ClassifierKind::Cosine) {
            const double w_norm = l2_norm(w);
            const double dot = dot_similarity(feature, w);
            // Quotient rule through both normalizations.
            const double a_fw = alpha / (feat_norm * w_norm);
            const double a_f = alpha * dot / (feat_norm * feat_norm * feat_norm * w_norm);
            const double a_w = alpha * dot / (feat_norm * w_norm * w_norm * w_norm);
            for (std::size_t m = 0; m < feat_dim; ++m) {
                result.grad.wrt_feature[m] += coeff * (a_fw * w[m] - a_f * feature[m]);
                result.grad.wrt_classifier_weights(k, m) =
                    coeff * (a_fw * feature[m] - a_w * w[m]);
            }
        } else {
            for (std::size_t m = 0; m < feat_dim; ++m) {
                result.grad.wrt_feature[m] += coeff * w[m];
                result.grad.wrt_classifier_weights(k, m) = coeff * feature[m];
            }
        }
    }
    return result;
}

double gradcheck_rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

struct GroupError {
    double rel = 0.0;
    std::string group;
};

void track(GroupError& worst, double rel, const char* group) {
    if (rel > worst.rel) {
        worst.rel = rel;
        worst.group = group;
    }
}

// Central finite differences over one flat coordinate array.
void fd_group(std::span<double> coords, std::span<const double> analytic,
              double step, const std::function<double()>& eval,
              const char* group, GroupError& worst) {
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double saved = coords[i];
        coords[i] = saved + step;
        const double up = eval();
        coords[i] = saved - step;
        const double down = eval();
        coords[i] = saved;
        const double fd = (up - down) / (2.0 * step);
        track(worst, gradcheck_rel_error(analytic[i], fd), group);
    }
}

// Central differences on an O(1) loss carry absolute noise of roughly 1e-9
// at step 1e-5 (rounding eps*|L|/h plus truncation h^2*|L'''|/6).  With the
// relative-error denominator floored at 1e-8, a true gradient entry much
// below ~1e-4 therefore reads as a large relative error even when the
// analytic formula is exact.  The samplers reject configurations that
// saturate the softmax — exponentially suppressed classes make
// exponentially small gradients — and configurations where any checked
// entry falls under an absolute floor.  A sampler that keeps rejecting is a
// loud failure (NumericError), not a silent pass.
bool posterior_conditioned(std::span<const double> posterior, double floor) {
    double lo = posterior[0];
    double hi = posterior[0];
    for (double p : posterior) {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    return lo >= floor && (1.0 - hi) >= floor;
}

bool entries_above(std::span<const double> values, double floor) {
    for (double v : values) {
        if (std::abs(v) < floor) return false;
    }
    return true;
}

}  // namespace

GradCheckReport gradcheck(std::string_view op_id, std::size_t trials,
                          double step, double tolerance, std::uint64_t seed) {
    GradCheckReport report;
    report.op = std::string(op_id);
    report.trials = trials;
    report.step = step;
    report.tolerance = tolerance;

    auto engine = make_engine(seed, 0x6c6f7373);
    std::uniform_int_distribution<std::size_t> dim_dist(2, 8);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);

    GroupError worst;

    if (op_id == "dce_loss" || op_id == "osr_loss") {
        const bool is_dce = op_id == "dce_loss";
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t dim = dim_dist(engine);
            const std::size_t num_classes = dim_dist(engine);
            std::uniform_int_distribution<std::size_t> label_dist(0, num_classes - 1);
            std::uniform_real_distribution<double> radius_dist(0.01, 2.0);
            std::uniform_real_distribution<double> near(-0.7, 0.7);
            std::uniform_real_distribution<double> unit(-1.0, 1.0);

            PrototypeSet protos;
            protos.mode = ProtoMode::Learnable;
            Vec f(dim);
            std::size_t label = 0;
            for (int attempt = 0;; ++attempt) {
                if (attempt > 20000) {
                    throw NumericError(
                        "gradcheck: could not sample a well-conditioned config");
                }
                protos.centers = Mat(num_classes, dim);
                label = label_dist(engine);
                protos.radius = radius_dist(engine);
                if (is_dce) {
                    // Modest coordinates plus an embedding near its own
                    // center keep the distance spread — and with it the
                    // posterior range — bounded.
                    for (double& x : protos.centers.data) x = unit(engine);
                    for (std::size_t m = 0; m < dim; ++m) {
                        f[m] = protos.centers(label, m) + near(engine);
                    }
                    Vec dists(num_classes);
                    for (std::size_t k = 0; k < num_classes; ++k) {
                        dists[k] = proto_distance(f, protos.centers.row(k), dim);
                    }
                    const Vec post = softmax_neg_distance(dists);
                    if (!posterior_conditioned(post, 1e-3)) continue;
                    const LossResult probe = dce_loss(f, label, protos);
                    if (!entries_above(probe.grad.wrt_embedding, 1e-4)) continue;
                    if (!entries_above(probe.grad.wrt_centers.data, 1e-4)) continue;
                    break;
                }
                for (double& x : protos.centers.data) x = coord(engine);
                for (double& x : f) x = coord(engine);
                // Central differences straddle the hinge kink when D_e is
                // near R; when active, near-zero coordinate gaps make the
                // per-entry gradients vanish.
                const double de =
                    euclidean_sq_scaled(f, protos.centers.row(label), dim);
                if (std::abs(de - protos.radius) < 0.05) continue;
                if (de > protos.radius) {
                    bool separated = true;
                    for (std::size_t m = 0; m < dim; ++m) {
                        if (std::abs(f[m] - protos.centers(label, m)) < 0.05) {
                            separated = false;
                            break;
                        }
                    }
                    if (!separated) continue;
                }
                break;
            }

            auto eval = [&]() {
                return is_dce ? dce_loss(f, label, protos).value
                              : osr_loss(f, label, protos).value;
            };
            const LossResult analytic = is_dce ? dce_loss(f, label, protos)
                                               : osr_loss(f, label, protos);

            fd_group(f, analytic.grad.wrt_embedding, step, eval, "embedding", worst);
            fd_group(protos.centers.data, analytic.grad.wrt_centers.data, step,
                     eval, "centers", worst);
            {
                const double saved = protos.radius;
                protos.radius = saved + step;
                const double up = eval();
                protos.radius = saved - step;
                const double down = eval();
                protos.radius = saved;
                const double fd = (up - down) / (2.0 * step);
                track(worst, gradcheck_rel_error(analytic.grad.wrt_radius, fd),
                      "radius");
            }
        }
    } else if (op_id == "cosine_ce_loss") {
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t feat_dim = dim_dist(engine);
            const std::size_t num_classes = dim_dist(engine);
            std::uniform_int_distribution<std::size_t> label_dist(0, num_classes - 1);
            std::uniform_real_distribution<double> alpha_dist(1.0, 16.0);
            std::uniform_real_distribution<double> scale_dist(1.2, 2.4);
            std::uniform_real_distribution<double> unit(-1.0, 1.0);

            // Directions drawn around a shared base: the cosine spread across
            // rows stays ~jitter, so alpha·spread cannot saturate the
            // softmax.  Norms well above 1 keep the 1/|w| curvature tame at
            // the finite-difference step.
            auto clustered = [&](std::span<double> v, std::span<const double> base,
                                 double jitter) {
                Vec g(v.size());
                for (double& x : g) x = unit(engine);
                for (std::size_t m = 0; m < v.size(); ++m) {
                    v[m] = base[m] + jitter * g[m];
                }
                const double n = l2_norm(v);
                const double s = scale_dist(engine) / std::max(n, kNormEpsilon);
                for (double& x : v) x *= s;
            };

            Vec feature(feat_dim);
            Mat weights(num_classes, feat_dim);
            std::size_t label = 0;
            double alpha = 16.0;
            for (int attempt = 0;; ++attempt) {
                if (attempt > 20000) {
                    throw NumericError(
                        "gradcheck: could not sample a well-conditioned config");
                }
                // Half the trials hold alpha at its largest default so the
                // steep-logit regime is always exercised.
                alpha = (t % 2 == 0) ? 16.0 : alpha_dist(engine);
                const double jitter = std::min(0.8, 3.0 / alpha);
                Vec base(feat_dim);
                double bn = 0.0;
                do {
                    for (double& x : base) x = unit(engine);
                    bn = l2_norm(base);
                } while (bn < 0.3);
                for (double& x : base) x /= bn;
                clustered(feature, base, jitter);
                for (std::size_t k = 0; k < num_classes; ++k) {
                    clustered(weights.row(k), base, jitter);
                }
                label = label_dist(engine);
                Vec logits(num_classes);
                for (std::size_t k = 0; k < num_classes; ++k) {
                    logits[k] = alpha * cosine_similarity(feature, weights.row(k));
                }
                const Vec post = softmax(logits);
                if (!posterior_conditioned(post, 1e-3)) continue;
                const LossResult probe =
                    cosine_ce_loss(feature, label, weights, alpha);
                if (!entries_above(probe.grad.wrt_feature, 3e-4)) continue;
                if (!entries_above(probe.grad.wrt_classifier_weights.data, 3e-4)) {
                    continue;
                }
                break;
            }

            auto eval = [&]() {
                return cosine_ce_loss(feature, label, weights, alpha).value;
            };
            const LossResult analytic = cosine_ce_loss(feature, label, weights, alpha);

            fd_group(feature, analytic.grad.wrt_feature, step, eval, "feature", worst);
            fd_group(weights.data, analytic.grad.wrt_classifier_weights.data, step,
                     eval, "weights", worst);
        }
    } else {
        throw std::invalid_argument("gradcheck: unknown op '" + std::string(op_id) +
                                    "'");
    }

    report.max_rel_error = worst.rel;
    report.worst_group = worst.group;
    report.pass = worst.rel <= tolerance;
    return report;
}

}  // namespace ocpl
