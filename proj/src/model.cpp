#include "ocpl/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "ocpl/errors.hpp"
#include "ocpl/io_util.hpp"
#include "ocpl/rng.hpp"

namespace ocpl {

namespace {

constexpr char kParamMagic[4] = {'O', 'C', 'P', 'L'};
constexpr std::uint32_t kParamVersion = 1;

// rng stream salts, one per parameter group
constexpr std::uint64_t kSaltExtractor = 0x100;
constexpr std::uint64_t kSaltEmbedProj = 0x200;
constexpr std::uint64_t kSaltClassifier = 0x300;
constexpr std::uint64_t kSaltGrowth = 0x400;

double leaky(double z) { return z > 0.0 ? z : kLeakySlope * z; }
double leaky_deriv(double z) { return z > 0.0 ? 1.0 : kLeakySlope; }

void apply_activation(Activation act, const Vec& pre, Vec& post) {
    post.resize(pre.size());
    switch (act) {
        case Activation::None:
            post = pre;
            break;
        case Activation::LeakyRelu:
            for (std::size_t i = 0; i < pre.size(); ++i) post[i] = leaky(pre[i]);
            break;
    }
}

Vec matvec(const Mat& w, std::span<const double> x) {
    if (w.cols != x.size()) {
        throw std::invalid_argument("matvec: shape mismatch (" +
                                    std::to_string(w.rows) + "x" +
                                    std::to_string(w.cols) + " vs input " +
                                    std::to_string(x.size()) + ")");
    }
    Vec out(w.rows, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
        double acc = 0.0;
        const auto row = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
    return out;
}

void fill_gaussian(std::mt19937_64& eng, double stddev, std::span<double> out) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : out) v = dist(eng);
}

}  // namespace

void ModelParams::validate() const {
    std::size_t cur = input_dim();
    for (std::size_t l = 0; l < extractor_layers.size(); ++l) {
        const DenseLayer& layer = extractor_layers[l];
        if (layer.in_dim() != cur) {
            throw std::invalid_argument(
                "ModelParams: layer " + std::to_string(l) + " expects input " +
                std::to_string(layer.in_dim()) + ", got " + std::to_string(cur));
        }
        if (layer.bias.size() != layer.out_dim()) {
            throw std::invalid_argument("ModelParams: layer " + std::to_string(l) +
                                        " bias size mismatch");
        }
        if (!all_finite(layer.weight.data) || !all_finite(layer.bias)) {
            throw NumericError("ModelParams: non-finite entry in layer " +
                               std::to_string(l));
        }
        cur = layer.out_dim();
    }
    if (embed_proj.cols != cur) {
        throw std::invalid_argument("ModelParams: embed_proj expects input " +
                                    std::to_string(embed_proj.cols) + ", got " +
                                    std::to_string(cur));
    }
    if (classifier_weights.cols != cur) {
        throw std::invalid_argument("ModelParams: classifier expects input " +
                                    std::to_string(classifier_weights.cols) +
                                    ", got " + std::to_string(cur));
    }
    if (!all_finite(embed_proj.data) || !all_finite(classifier_weights.data)) {
        throw NumericError("ModelParams: non-finite head entry");
    }
    if (alpha <= 0.0) {
        throw std::invalid_argument("ModelParams: alpha must be positive");
    }
    if (protos.dim() != embed_dim()) {
        throw std::invalid_argument("ModelParams: prototype dim " +
                                    std::to_string(protos.dim()) +
                                    " != embedding dim " +
                                    std::to_string(embed_dim()));
    }
    if (protos.num_classes() != num_classes()) {
        throw std::invalid_argument("ModelParams: prototype count " +
                                    std::to_string(protos.num_classes()) +
                                    " != classifier rows " +
                                    std::to_string(num_classes()));
    }
    protos.validate();
}

ModelParams make_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim == 0 || cfg.embed_dim == 0 || cfg.num_classes == 0) {
        throw std::invalid_argument("make_model: dimensions must be positive");
    }
    if (cfg.alpha <= 0.0) {
        throw std::invalid_argument("make_model: alpha must be positive");
    }
    ModelParams params;
    params.alpha = cfg.alpha;
    params.classifier_kind = cfg.classifier_kind;

    std::size_t cur = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.hidden_dims.size(); ++l) {
        const std::size_t out = cfg.hidden_dims[l];
        if (out == 0) {
            throw std::invalid_argument("make_model: hidden dim must be positive");
        }
        DenseLayer layer;
        layer.weight = Mat(out, cur);
        layer.bias.assign(out, 0.0);
        layer.activation = Activation::LeakyRelu;
        auto eng = make_engine(seed, kSaltExtractor + l);
        fill_gaussian(eng, std::sqrt(2.0 / static_cast<double>(cur)),
                      layer.weight.data);
        params.extractor_layers.push_back(std::move(layer));
        cur = out;
    }

    params.embed_proj = Mat(cfg.embed_dim, cur);
    {
        auto eng = make_engine(seed, kSaltEmbedProj);
        fill_gaussian(eng, std::sqrt(1.0 / static_cast<double>(cur)),
                      params.embed_proj.data);
    }
    params.classifier_weights = Mat(cfg.num_classes, cur);
    {
        auto eng = make_engine(seed, kSaltClassifier);
        fill_gaussian(eng, 0.1, params.classifier_weights.data);
    }

    // Prototype centers are installed by the trainer's init_prototypes; a
    // placeholder consistent with the mode keeps the struct valid meanwhile.
    params.protos.mode = cfg.proto_mode;
    params.protos.centers = Mat(cfg.num_classes, cfg.embed_dim);
    if (cfg.proto_mode == ProtoMode::FixedFinetuned) {
        if (cfg.embed_dim < cfg.num_classes) {
            throw std::invalid_argument(
                "make_model: fixed-finetuned prototypes need embed_dim >= "
                "num_classes, got " + std::to_string(cfg.embed_dim) + " < " +
                std::to_string(cfg.num_classes));
        }
        for (std::size_t k = 0; k < cfg.num_classes; ++k) {
            params.protos.centers(k, k) = 1.0;
        }
    } else {
        auto eng = make_engine(seed, kSaltGrowth);
        fill_gaussian(eng, 0.1, params.protos.centers.data);
    }
    params.protos.radius = 0.0;

    params.validate();
    return params;
}

void grow_model(ModelParams& params, std::size_t new_classes, std::uint64_t seed) {
    if (new_classes == 0) return;
    const std::size_t old_k = params.num_classes();
    const std::size_t total = old_k + new_classes;
    const std::size_t feat = params.feature_dim();
    const std::size_t d = params.embed_dim();

    if (params.protos.mode == ProtoMode::FixedFinetuned && d < total) {
        throw std::invalid_argument(
            "grow_model: no unused one-hot axis left (embed_dim " +
            std::to_string(d) + " < " + std::to_string(total) + " classes)");
    }

    Mat classifier(total, feat);
    std::copy(params.classifier_weights.data.begin(),
              params.classifier_weights.data.end(), classifier.data.begin());
    {
        auto eng = make_engine(seed, mix_seed(kSaltGrowth, old_k));
        fill_gaussian(eng, 1e-3,
                      std::span<double>(classifier.data.data() + old_k * feat,
                                        new_classes * feat));
    }
    params.classifier_weights = std::move(classifier);

    Mat centers(total, d);
    std::copy(params.protos.centers.data.begin(), params.protos.centers.data.end(),
              centers.data.begin());
    if (params.protos.mode == ProtoMode::FixedFinetuned) {
        // New classes claim the next unused basis axes; existing (possibly
        // fine-tuned) centers are untouched.
        for (std::size_t k = old_k; k < total; ++k) centers(k, k) = 1.0;
    } else {
        auto eng = make_engine(seed, mix_seed(kSaltGrowth + 1, old_k));
        fill_gaussian(eng, 0.1,
                      std::span<double>(centers.data.data() + old_k * d,
                                        new_classes * d));
    }
    params.protos.centers = std::move(centers);

    params.validate();
}

ForwardResult forward(const ModelParams& params, std::span<const double> input) {
    if (input.size() != params.input_dim()) {
        throw std::invalid_argument("forward: input dim " +
                                    std::to_string(input.size()) + " != " +
                                    std::to_string(params.input_dim()));
    }
    ForwardResult r;
    r.preactivations.reserve(params.extractor_layers.size());
    r.activations.reserve(params.extractor_layers.size());

    Vec cur(input.begin(), input.end());
    for (const DenseLayer& layer : params.extractor_layers) {
        Vec pre = matvec(layer.weight, cur);
        for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += layer.bias[i];
        Vec post;
        apply_activation(layer.activation, pre, post);
        r.preactivations.push_back(std::move(pre));
        r.activations.push_back(post);
        cur = std::move(post);
    }
    r.feature = std::move(cur);
    r.embedding = matvec(params.embed_proj, r.feature);

    const std::size_t num_classes = params.num_classes();
    r.logits.resize(num_classes);
    if (params.classifier_kind == ClassifierKind::Cosine) {
        for (std::size_t k = 0; k < num_classes; ++k) {
            r.logits[k] = params.alpha * cosine_similarity(
                                             r.feature,
                                             params.classifier_weights.row(k));
        }
    } else {
        for (std::size_t k = 0; k < num_classes; ++k) {
            r.logits[k] =
                dot_similarity(r.feature, params.classifier_weights.row(k));
        }
    }
    return r;
}

ModelGradients make_zero_gradients(const ModelParams& params) {
    ModelGradients g;
    g.layer_weights.reserve(params.extractor_layers.size());
    g.layer_biases.reserve(params.extractor_layers.size());
    for (const DenseLayer& layer : params.extractor_layers) {
        g.layer_weights.emplace_back(layer.out_dim(), layer.in_dim());
        g.layer_biases.emplace_back(layer.out_dim(), 0.0);
    }
    g.embed_proj = Mat(params.embed_proj.rows, params.embed_proj.cols);
    g.classifier_weights =
        Mat(params.classifier_weights.rows, params.classifier_weights.cols);
    g.centers = Mat(params.protos.centers.rows, params.protos.centers.cols);
    g.radius = 0.0;
    return g;
}

BackwardResult backward(const ModelParams& params, std::span<const double> input,
                        std::size_t label, const BackwardOptions& opts) {
    const ForwardResult fwd = forward(params, input);

    const LossResult cls = classifier_ce_loss(fwd.feature, label,
                                              params.classifier_weights,
                                              params.alpha,
                                              params.classifier_kind);
    const ProtoLossResult proto =
        proto_loss(fwd.embedding, label, params.protos, opts.lambda);

    BackwardResult result;
    result.breakdown = proto.breakdown;
    result.breakdown.cls = cls.value;
    result.breakdown.total = cls.value + proto.breakdown.total;
    result.clamped = cls.clamped || proto.clamped;

    ModelGradients& g = result.grads;
    g.classifier_weights = cls.grad.wrt_classifier_weights;
    g.centers = proto.grad.wrt_centers;
    g.radius = proto.grad.wrt_radius;

    // Embedding head: embedding = embed_proj * feature.
    const std::size_t d = params.embed_dim();
    const std::size_t feat_dim = params.feature_dim();
    const Vec& ge = proto.grad.wrt_embedding;
    g.embed_proj = Mat(d, feat_dim);
    Vec feature_grad = cls.grad.wrt_feature;  // classifier head contribution
    for (std::size_t i = 0; i < d; ++i) {
        const auto proj_row = params.embed_proj.row(i);
        for (std::size_t j = 0; j < feat_dim; ++j) {
            g.embed_proj(i, j) = ge[i] * fwd.feature[j];
            feature_grad[j] += proj_row[j] * ge[i];
        }
    }

    const std::size_t depth = params.extractor_layers.size();
    g.layer_weights.resize(depth);
    g.layer_biases.resize(depth);
    if (opts.freeze_extractor) {
        for (std::size_t l = 0; l < depth; ++l) {
            const DenseLayer& layer = params.extractor_layers[l];
            g.layer_weights[l] = Mat(layer.out_dim(), layer.in_dim());
            g.layer_biases[l].assign(layer.out_dim(), 0.0);
        }
        return result;
    }

    Vec upstream = std::move(feature_grad);
    for (std::size_t l = depth; l-- > 0;) {
        const DenseLayer& layer = params.extractor_layers[l];
        const Vec& pre = fwd.preactivations[l];
        std::span<const double> prev_act =
            l == 0 ? input : std::span<const double>(fwd.activations[l - 1]);

        Vec dz(layer.out_dim());
        for (std::size_t i = 0; i < dz.size(); ++i) {
            const double deriv = layer.activation == Activation::LeakyRelu
                                     ? leaky_deriv(pre[i])
                                     : 1.0;
            dz[i] = upstream[i] * deriv;
        }
        Mat gw(layer.out_dim(), layer.in_dim());
        Vec downstream(layer.in_dim(), 0.0);
        for (std::size_t i = 0; i < layer.out_dim(); ++i) {
            const auto wrow = layer.weight.row(i);
            for (std::size_t j = 0; j < layer.in_dim(); ++j) {
                gw(i, j) = dz[i] * prev_act[j];
                downstream[j] += wrow[j] * dz[i];
            }
        }
        g.layer_weights[l] = std::move(gw);
        g.layer_biases[l] = std::move(dz);
        upstream = std::move(downstream);
    }
    return result;
}

void InferenceConfig::validate() const {
    if (gamma < 0.0 || gamma > 1.0) {
        throw std::invalid_argument("InferenceConfig: gamma must be in [0, 1]");
    }
    if (xi < 0.0 || xi > 1.0) {
        throw std::invalid_argument("InferenceConfig: xi must be in [0, 1]");
    }
}

Prediction infer(const ModelParams& params, std::span<const double> input,
                 const InferenceConfig& cfg) {
    cfg.validate();
    ForwardResult fwd = forward(params, input);

    Prediction pred;
    pred.class_scores = softmax(fwd.logits);
    pred.embedding = std::move(fwd.embedding);

    const std::size_t num_classes = params.num_classes();
    const std::size_t d = params.embed_dim();
    Vec distances(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        distances[k] =
            proto_distance(pred.embedding, params.protos.centers.row(k), d);
    }
    pred.proto_posterior = softmax_neg_distance(distances);
    pred.known_class = static_cast<std::size_t>(
        std::max_element(pred.proto_posterior.begin(), pred.proto_posterior.end()) -
        pred.proto_posterior.begin());

    const double max_score =
        *std::max_element(pred.class_scores.begin(), pred.class_scores.end());
    if (max_score < cfg.gamma) {
        pred.decision = Decision::Filtered;
    } else if (pred.proto_posterior[pred.known_class] >= cfg.xi) {
        pred.decision = Decision::Known;
    } else {
        pred.decision = Decision::Unknown;
    }
    return pred;
}

namespace {

void put_mat(std::string& out, const Mat& m) {
    put_u64(out, m.rows);
    put_u64(out, m.cols);
    for (double v : m.data) put_f64(out, v);
}

Mat read_mat(ByteReader& r) {
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    // Guard the multiplication before allocating.
    if (rows > (1u << 20) || cols > (1u << 20)) {
        throw IoError("implausible matrix shape in section '" + r.section() +
                      "' (" + std::to_string(rows) + "x" + std::to_string(cols) +
                      ")");
    }
    Mat m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (double& v : m.data) v = r.f64();
    return m;
}

}  // namespace

void save_params(const ModelParams& params, const std::string& path) {
    std::string out;
    out.append(kParamMagic, sizeof(kParamMagic));
    put_u32(out, kParamVersion);

    put_u8(out, params.classifier_kind == ClassifierKind::Cosine ? 0 : 1);
    put_f64(out, params.alpha);

    put_u32(out, static_cast<std::uint32_t>(params.extractor_layers.size()));
    for (const DenseLayer& layer : params.extractor_layers) {
        put_u8(out, static_cast<std::uint8_t>(layer.activation));
        put_mat(out, layer.weight);
        for (double v : layer.bias) put_f64(out, v);
    }
    put_mat(out, params.embed_proj);
    put_mat(out, params.classifier_weights);

    put_u8(out, params.protos.mode == ProtoMode::FixedFinetuned ? 0 : 1);
    put_f64(out, params.protos.radius);
    put_mat(out, params.protos.centers);

    atomic_write_file(path, out);
}

ModelParams load_params(const std::string& path) {
    const std::string buf = read_file(path);
    ByteReader r(buf);

    r.set_section("magic");
    const std::string_view magic = r.bytes(sizeof(kParamMagic));
    if (magic != std::string_view(kParamMagic, sizeof(kParamMagic))) {
        throw IoError("'" + path + "' is not a parameter file (bad magic)");
    }
    r.set_section("version");
    const std::uint32_t version = r.u32();
    if (version != kParamVersion) {
        throw IoError("unsupported parameter file version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(kParamVersion) + ")");
    }

    ModelParams params;
    r.set_section("classifier header");
    const std::uint8_t kind = r.u8();
    if (kind > 1) {
        throw IoError("invalid classifier kind tag " + std::to_string(kind));
    }
    params.classifier_kind = kind == 0 ? ClassifierKind::Cosine
                                       : ClassifierKind::InnerProduct;
    params.alpha = r.f64();

    r.set_section("extractor layers");
    const std::uint32_t num_layers = r.u32();
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        r.set_section("extractor layer " + std::to_string(l));
        DenseLayer layer;
        const std::uint8_t act = r.u8();
        if (act > 1) {
            throw IoError("invalid activation tag " + std::to_string(act) +
                          " in layer " + std::to_string(l));
        }
        layer.activation = static_cast<Activation>(act);
        layer.weight = read_mat(r);
        layer.bias.resize(layer.weight.rows);
        for (double& v : layer.bias) v = r.f64();
        params.extractor_layers.push_back(std::move(layer));
    }

    r.set_section("embedding projection");
    params.embed_proj = read_mat(r);
    r.set_section("classifier weights");
    params.classifier_weights = read_mat(r);

    r.set_section("prototypes");
    const std::uint8_t mode = r.u8();
    if (mode > 1) {
        throw IoError("invalid prototype mode tag " + std::to_string(mode));
    }
    params.protos.mode =
        mode == 0 ? ProtoMode::FixedFinetuned : ProtoMode::Learnable;
    params.protos.radius = r.f64();
    params.protos.centers = read_mat(r);

    if (r.remaining() != 0) {
        throw IoError("'" + path + "' has " + std::to_string(r.remaining()) +
                      " trailing bytes after the prototype section");
    }
    try {
        params.validate();
    } catch (const std::exception& e) {
        throw IoError("parameter file '" + path + "' failed validation: " +
                      e.what());
    }
    return params;
}

std::vector<double*> collect_parameters(ModelParams& params,
                                        bool include_extractor) {
    std::vector<double*> out;
    if (include_extractor) {
        for (DenseLayer& layer : params.extractor_layers) {
            for (double& v : layer.weight.data) out.push_back(&v);
            for (double& v : layer.bias) out.push_back(&v);
        }
    }
    for (double& v : params.embed_proj.data) out.push_back(&v);
    for (double& v : params.classifier_weights.data) out.push_back(&v);
    if (params.protos.mode == ProtoMode::Learnable) {
        for (double& v : params.protos.centers.data) out.push_back(&v);
    }
    out.push_back(&params.protos.radius);
    return out;
}

std::vector<double*> collect_gradients(ModelGradients& grads, ProtoMode mode,
                                       bool include_extractor) {
    std::vector<double*> out;
    if (include_extractor) {
        for (std::size_t l = 0; l < grads.layer_weights.size(); ++l) {
            for (double& v : grads.layer_weights[l].data) out.push_back(&v);
            for (double& v : grads.layer_biases[l]) out.push_back(&v);
        }
    }
    for (double& v : grads.embed_proj.data) out.push_back(&v);
    for (double& v : grads.classifier_weights.data) out.push_back(&v);
    if (mode == ProtoMode::Learnable) {
        for (double& v : grads.centers.data) out.push_back(&v);
    }
    out.push_back(&grads.radius);
    return out;
}

namespace {

double loss_total(const ModelParams& params, std::span<const double> input,
                  std::size_t label, double lambda) {
    const ForwardResult fwd = forward(params, input);
    const double cls = classifier_ce_loss(fwd.feature, label,
                                          params.classifier_weights, params.alpha,
                                          params.classifier_kind)
                           .value;
    return cls + proto_loss(fwd.embedding, label, params.protos, lambda)
                     .breakdown.total;
}

// True when any preactivation sits within `margin` of the leaky-rectifier
// kink, where central differences straddle the slope change.
bool near_activation_kink(const ForwardResult& fwd, double margin) {
    for (const Vec& pre : fwd.preactivations) {
        for (double z : pre) {
            if (std::abs(z) < margin) return true;
        }
    }
    return false;
}

// Saturated softmax heads make some gradient entries exponentially small,
// below what central differences can resolve at the checking step.
bool head_conditioned(std::span<const double> posterior, double floor) {
    double lo = posterior[0];
    double hi = posterior[0];
    for (double p : posterior) {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    return lo >= floor && (1.0 - hi) >= floor;
}

}  // namespace

GradCheckReport gradcheck_backward(std::size_t trials, double step,
                                   double tolerance, std::uint64_t seed) {
    GradCheckReport report;
    report.op = "model_backward";
    report.trials = trials;
    report.step = step;
    report.tolerance = tolerance;

    auto engine = make_engine(seed, 0x6d646c62);
    std::uniform_int_distribution<std::size_t> dim_dist(2, 8);
    std::uniform_int_distribution<std::size_t> depth_dist(0, 2);
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    std::uniform_real_distribution<double> alpha_dist(1.0, 16.0);
    std::uniform_real_distribution<double> lambda_dist(0.05, 1.0);
    std::uniform_real_distribution<double> radius_dist(0.01, 2.0);

    double worst_rel = 0.0;
    std::string worst_group;

    for (std::size_t t = 0; t < trials; ++t) {
        ModelParams params;
        Vec input;
        std::size_t label = 0;
        double lambda = kDefaultLambda;

        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000) {
                throw NumericError(
                    "gradcheck_backward: could not sample a kink-free config");
            }
            ModelConfig cfg;
            cfg.input_dim = dim_dist(engine);
            const std::size_t depth = depth_dist(engine);
            cfg.hidden_dims.clear();
            for (std::size_t l = 0; l < depth; ++l) {
                cfg.hidden_dims.push_back(dim_dist(engine));
            }
            cfg.num_classes = dim_dist(engine);
            cfg.proto_mode = (t % 2 == 0) ? ProtoMode::Learnable
                                          : ProtoMode::FixedFinetuned;
            cfg.embed_dim = cfg.proto_mode == ProtoMode::FixedFinetuned
                                ? std::max(dim_dist(engine), cfg.num_classes)
                                : dim_dist(engine);
            cfg.classifier_kind = (t % 3 == 0) ? ClassifierKind::InnerProduct
                                               : ClassifierKind::Cosine;
            cfg.alpha = alpha_dist(engine);
            lambda = lambda_dist(engine);

            params = make_model(cfg, mix_seed(seed, t * 1000 + attempt));
            params.protos.radius = radius_dist(engine);
            std::uniform_int_distribution<std::size_t> label_dist(
                0, cfg.num_classes - 1);
            label = label_dist(engine);
            input.resize(cfg.input_dim);
            for (double& v : input) v = coord(engine);

            // The check owns its parameter point: classifier rows get norms
            // well above 1 (tame 1/|w| curvature), and the centers sit near
            // the realized embedding so neither softmax head saturates.
            std::uniform_real_distribution<double> row_scale(1.2, 2.4);
            std::uniform_real_distribution<double> offset(-0.7, 0.7);
            for (std::size_t k = 0; k < params.num_classes(); ++k) {
                auto row = params.classifier_weights.row(k);
                double n = 0.0;
                do {
                    for (double& v : row) v = coord(engine);
                    n = l2_norm(row);
                } while (n < 1e-3);
                const double s = row_scale(engine) / n;
                for (double& v : row) v *= s;
            }
            {
                ForwardResult probe = forward(params, input);
                const double en = l2_norm(probe.embedding);
                if (en < 1e-6) continue;
                std::uniform_real_distribution<double> embed_scale(0.9, 1.5);
                const double es = embed_scale(engine) / en;
                for (double& v : params.embed_proj.data) v *= es;
                probe = forward(params, input);
                for (std::size_t k = 0; k < params.num_classes(); ++k) {
                    for (std::size_t m = 0; m < params.embed_dim(); ++m) {
                        params.protos.centers(k, m) =
                            probe.embedding[m] + offset(engine);
                    }
                }
            }

            const ForwardResult fwd = forward(params, input);
            if (near_activation_kink(fwd, 0.02)) continue;
            if (l2_norm(fwd.feature) < 0.5) continue;
            if (!head_conditioned(softmax(fwd.logits), 1e-3)) continue;
            Vec proto_dists(params.num_classes());
            for (std::size_t k = 0; k < params.num_classes(); ++k) {
                proto_dists[k] = proto_distance(
                    fwd.embedding, params.protos.centers.row(k),
                    params.embed_dim());
            }
            if (!head_conditioned(softmax_neg_distance(proto_dists), 1e-3)) {
                continue;
            }
            const double de = euclidean_sq_scaled(
                fwd.embedding, params.protos.centers.row(label),
                params.embed_dim());
            if (std::abs(de - params.protos.radius) < 0.05) continue;
            break;
        }

        BackwardOptions opts;
        opts.lambda = lambda;
        BackwardResult analytic = backward(params, input, label, opts);

        std::vector<double*> coords = collect_parameters(params, true);
        std::vector<double*> grads =
            collect_gradients(analytic.grads, params.protos.mode, true);
        // Group boundaries mirror collect_parameters' ordering.
        std::size_t extractor_count = 0;
        for (const DenseLayer& layer : params.extractor_layers) {
            extractor_count += layer.weight.data.size() + layer.bias.size();
        }
        const std::size_t embed_end = extractor_count + params.embed_proj.data.size();
        const std::size_t cls_end =
            embed_end + params.classifier_weights.data.size();

        // Entries where analytic and finite-difference values are both tiny
        // agree on "negligible"; their ratio is dominated by rounding noise
        // in the difference quotient, so they are not compared.  Either side
        // rising above the floor re-enables the comparison, which keeps a
        // wrongly-zero analytic entry detectable.
        constexpr double kNegligible = 3e-4;
        for (std::size_t i = 0; i < coords.size(); ++i) {
            const double saved = *coords[i];
            *coords[i] = saved + step;
            const double up = loss_total(params, input, label, lambda);
            *coords[i] = saved - step;
            const double down = loss_total(params, input, label, lambda);
            *coords[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            if (std::abs(*grads[i]) < kNegligible && std::abs(fd) < kNegligible) {
                continue;
            }
            const double rel = gradcheck_rel_error(*grads[i], fd);
            if (rel > worst_rel) {
                worst_rel = rel;
                if (i < extractor_count) {
                    worst_group = "extractor";
                } else if (i < embed_end) {
                    worst_group = "embed_proj";
                } else if (i < cls_end) {
                    worst_group = "classifier";
                } else if (i + 1 == coords.size()) {
                    worst_group = "radius";
                } else {
                    worst_group = "centers";
                }
            }
        }
    }

    report.max_rel_error = worst_rel;
    report.worst_group = worst_group;
    report.pass = worst_rel <= tolerance;
    return report;
}

}  // namespace ocpl
