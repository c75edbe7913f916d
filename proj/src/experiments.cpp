#include "ocpl/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string_view>

#include "ocpl/errors.hpp"
#include "ocpl/io_util.hpp"
#include "ocpl/rng.hpp"
#include "ocpl/trainer.hpp"

namespace ocpl {

namespace {

constexpr std::uint64_t kSaltOpenSetData = 0x6f736461;
constexpr std::uint64_t kSaltOpenSetSplit = 0x6f737370;
constexpr std::uint64_t kSaltOpenSetVal = 0x6f737661;
constexpr std::uint64_t kSaltOpenSetModel = 0x6f736d64;
constexpr std::uint64_t kSaltOpenSetTrain = 0x6f737472;
constexpr std::uint64_t kSaltAblation = 0x61626c74;
constexpr std::uint64_t kSaltPairing = 0x70616972;

}  // namespace

double select_xi(const PredictionDump& validation_dump, std::size_t num_known,
                 double target_acc) {
    std::set<std::size_t> all_known;
    for (std::size_t k = 0; k < num_known; ++k) all_known.insert(k);

    // The validation accuracy is a binomial estimate of the accuracy the
    // threshold will deliver on fresh data, so holding the floor at exactly
    // target_acc picks a cut that undershoots the target about half the time.
    // Requiring one standard error above the target buffers that noise; the
    // margin shrinks as the split grows.
    double floor = target_acc;
    if (!validation_dump.empty() && target_acc > 0.0 && target_acc < 1.0) {
        floor += std::sqrt(target_acc * (1.0 - target_acc) /
                           static_cast<double>(validation_dump.size()));
    }

    // Candidate thresholds come from the posteriors actually observed on the
    // validation split (ROC-style), plus the value one ulp above each so a
    // candidate can reject the row that produced it.  A fixed grid cannot
    // work here: trained posteriors concentrate extremely close to 1, so the
    // informative cuts live at data-dependent positions.
    std::set<double> candidates{0.0};
    for (const DumpRow& row : validation_dump) {
        candidates.insert(row.top_known_posterior);
        candidates.insert(
            std::min(1.0, std::nextafter(row.top_known_posterior, 2.0)));
    }

    double best = 0.0;
    for (double xi : candidates) {
        const PredictionDump re = rethreshold(validation_dump, xi);
        const ConfusionMatrix confusion = build_confusion(re, num_known);
        const GroupedAccuracy acc = grouped_accuracy(confusion, {}, all_known);
        if (acc.current && *acc.current >= floor && xi > best) {
            best = xi;
        }
    }
    return best;
}

OpenSetResult run_open_set_experiment(const RunConfig& cfg, std::uint64_t seed,
                                      ProtoMode mode, double lambda,
                                      ClassifierKind kind) {
    const std::size_t total_classes = cfg.known_classes + cfg.unknown_classes;
    if (cfg.unknown_classes == 0) {
        throw std::invalid_argument(
            "run_open_set_experiment: needs at least one unknown class");
    }

    // One generator call for all classes keeps every pair of centers
    // (known-known and known-unknown alike) separated.
    const FeatureDataset all = gen_gaussian_blobs(
        total_classes, cfg.data.samples_per_class, cfg.data.feature_dim,
        cfg.data.center_spread, cfg.data.cluster_std,
        mix_seed(seed, kSaltOpenSetData));

    std::set<std::size_t> known_set, unknown_set;
    for (std::size_t k = 0; k < cfg.known_classes; ++k) known_set.insert(k);
    for (std::size_t k = cfg.known_classes; k < total_classes; ++k) {
        unknown_set.insert(k);
    }
    const FeatureDataset known_data = filter_by_labels(all, known_set);
    const FeatureDataset unknown_data = filter_by_labels(all, unknown_set);

    auto [known_train_full, known_test] =
        holdout_split(known_data, cfg.holdout_fraction,
                      mix_seed(seed, kSaltOpenSetSplit));
    auto [train_data, val_data] = holdout_split(
        known_train_full, 0.2, mix_seed(seed, kSaltOpenSetVal));

    ModelConfig mc = make_model_config(cfg, all.feature_dim, cfg.known_classes);
    mc.proto_mode = mode;
    mc.classifier_kind = kind;
    ModelParams model = make_model(mc, mix_seed(seed, kSaltOpenSetModel));

    TrainConfig tc = cfg.train;
    tc.proto_mode = mode;
    tc.lambda = lambda;
    tc.seed = mix_seed(seed, kSaltOpenSetTrain);
    TrainResult trained = train(std::move(model), train_data, tc);

    OpenSetResult result;
    result.params = std::move(trained.params);

    // xi is chosen on known-only validation predictions taken at xi = 0; the
    // dump carries the posteriors, so other thresholds come from rethreshold.
    InferenceConfig probe;
    probe.gamma = cfg.infer.gamma;
    probe.xi = 0.0;
    PredictionDump val_dump;
    val_dump.reserve(val_data.samples.size());
    for (std::size_t i = 0; i < val_data.samples.size(); ++i) {
        const Sample& s = val_data.samples[i];
        const Prediction pred = infer(result.params, s.feature, probe);
        DumpRow row;
        row.sample_id = i;
        row.true_label = static_cast<std::int64_t>(s.label);
        row.decision = pred.decision;
        row.top_known_class = pred.known_class;
        row.top_known_posterior = pred.proto_posterior[pred.known_class];
        row.max_class_score =
            *std::max_element(pred.class_scores.begin(), pred.class_scores.end());
        val_dump.push_back(row);
    }
    result.xi = select_xi(val_dump, cfg.known_classes);

    InferenceConfig final_cfg;
    final_cfg.gamma = cfg.infer.gamma;
    final_cfg.xi = result.xi;

    PredictionDump open_dump;
    open_dump.reserve(known_test.samples.size() + unknown_data.samples.size());
    std::size_t next_id = 0;
    auto add_rows = [&](const FeatureDataset& data, bool known) {
        for (const Sample& s : data.samples) {
            const Prediction pred = infer(result.params, s.feature, final_cfg);
            DumpRow row;
            row.sample_id = next_id++;
            row.true_label = known ? static_cast<std::int64_t>(s.label)
                                   : kUnknownLabel;
            row.decision = pred.decision;
            row.top_known_class = pred.known_class;
            row.top_known_posterior = pred.proto_posterior[pred.known_class];
            row.max_class_score = *std::max_element(pred.class_scores.begin(),
                                                    pred.class_scores.end());
            open_dump.push_back(row);
        }
    };
    add_rows(known_test, true);
    add_rows(unknown_data, false);

    std::set<std::size_t> known_ids;
    for (std::size_t k = 0; k < cfg.known_classes; ++k) known_ids.insert(k);
    const MetricsReport report =
        make_report(open_dump, cfg.known_classes, {}, known_ids);
    result.known_acc = report.acc_current;
    result.ur = report.ur;
    result.a_ose = report.a_ose;
    result.wi = report.wi;
    result.mean_intra_de = compactness(result.params, known_test).mean_intra_de;
    result.dump = std::move(open_dump);
    return result;
}

namespace {

// A run whose training or evaluation went non-finite recognizes nothing: it
// scores zero accuracy and recall, and its cluster spread is unbounded.
void record_diverged(AblationCellResult& cr) {
    cr.xi.push_back(0.0);
    cr.known_acc.push_back(0.0);
    cr.ur.push_back(0.0);
    cr.a_ose.push_back(0.0);
    cr.wi.push_back(std::nullopt);
    cr.mean_intra_de.push_back(std::numeric_limits<double>::infinity());
    cr.diverged.push_back(true);
}

}  // namespace

std::vector<AblationCell> ablation_grid() {
    auto cell = [](const char* name, ProtoMode mode, bool esc, bool csc) {
        AblationCell c;
        c.name = name;
        c.mode = mode;
        c.esc = esc;
        c.csc = csc;
        return c;
    };
    return {
        cell("learnable", ProtoMode::Learnable, false, false),
        cell("learnable+esc", ProtoMode::Learnable, true, false),
        cell("learnable+csc", ProtoMode::Learnable, false, true),
        cell("fixed", ProtoMode::FixedFinetuned, false, false),
        cell("fixed+esc", ProtoMode::FixedFinetuned, true, false),
        cell("fixed+esc+csc", ProtoMode::FixedFinetuned, true, true),
    };
}

AblationResult run_ablation(const RunConfig& cfg) {
    AblationResult result;
    for (std::size_t s = 0; s < cfg.ablation_seeds; ++s) {
        result.seeds.push_back(mix_seed(cfg.seed, kSaltAblation + s));
    }
    for (const AblationCell& cell : ablation_grid()) {
        AblationCellResult cr;
        cr.cell = cell;
        for (std::uint64_t seed : result.seeds) {
            const double lambda = cell.esc ? cfg.train.lambda : 0.0;
            const ClassifierKind kind = cell.csc ? ClassifierKind::Cosine
                                                 : ClassifierKind::InnerProduct;
            // Cells without the compression hinge can blow up: nothing bounds
            // the embedding scale, and once it inflates past the stable step
            // size the loss goes non-finite and train() aborts. Record such a
            // run as a failed configuration instead of aborting the grid: it
            // recognizes nothing and its cluster spread is unbounded.
            try {
                OpenSetResult run =
                    run_open_set_experiment(cfg, seed, cell.mode, lambda, kind);
                cr.xi.push_back(run.xi);
                cr.known_acc.push_back(run.known_acc.value_or(0.0));
                cr.ur.push_back(run.ur.value_or(0.0));
                cr.a_ose.push_back(static_cast<double>(run.a_ose));
                cr.wi.push_back(run.wi);
                cr.mean_intra_de.push_back(run.mean_intra_de);
                cr.diverged.push_back(false);
            } catch (const NumericError&) {
                record_diverged(cr);
            } catch (const std::invalid_argument& e) {
                // Training can finish with finite parameters whose distances
                // overflow only on the farther unknown-class samples; those
                // runs fail at evaluation instead of mid-training.
                if (std::string_view(e.what()).find("non-finite") ==
                    std::string_view::npos) {
                    throw;
                }
                record_diverged(cr);
            }
        }
        result.cells.push_back(std::move(cr));
    }
    return result;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty vector");
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double sample_std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double median_of(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median_of: empty vector");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

std::vector<double> present_values(
    const std::vector<std::optional<double>>& v) {
    std::vector<double> out;
    for (const auto& x : v) {
        if (x) out.push_back(*x);
    }
    return out;
}

}  // namespace

nlohmann::ordered_json ablation_to_json(const AblationResult& result) {
    nlohmann::ordered_json j;
    j["seeds"] = result.seeds;
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const AblationCellResult& cr : result.cells) {
        nlohmann::ordered_json c;
        c["cell"] = cr.cell.name;
        c["proto_mode"] = proto_mode_name(cr.cell.mode);
        c["esc"] = cr.cell.esc;
        c["csc"] = cr.cell.csc;
        c["xi"] = cr.xi;
        c["known_acc"] = cr.known_acc;
        c["ur"] = cr.ur;
        c["a_ose"] = cr.a_ose;
        nlohmann::ordered_json wi = nlohmann::ordered_json::array();
        for (const auto& v : cr.wi) {
            wi.push_back(v ? nlohmann::ordered_json(*v)
                           : nlohmann::ordered_json(nullptr));
        }
        c["wi"] = std::move(wi);
        c["mean_intra_de"] = cr.mean_intra_de;
        c["diverged"] = cr.diverged;
        c["ur_median"] = median_of(cr.ur);
        cells.push_back(std::move(c));
    }
    j["cells"] = std::move(cells);
    return j;
}

std::string ablation_to_csv(const AblationResult& result) {
    std::string out =
        "cell,proto_mode,esc,csc,wi_mean,wi_std,a_ose_mean,a_ose_std,acc_mean,"
        "acc_std,ur_mean,ur_std,ur_median,intra_de_mean,intra_de_std,diverged\n";
    for (const AblationCellResult& cr : result.cells) {
        const std::vector<double> wi = present_values(cr.wi);
        // Intra-class spread is infinite for diverged runs; the summary
        // statistics cover the finite runs, with the diverged count reported
        // in its own column.
        std::vector<double> intra_finite;
        std::size_t diverged_count = 0;
        for (std::size_t s = 0; s < cr.mean_intra_de.size(); ++s) {
            if (s < cr.diverged.size() && cr.diverged[s]) {
                ++diverged_count;
            } else {
                intra_finite.push_back(cr.mean_intra_de[s]);
            }
        }
        out += cr.cell.name;
        out += ',';
        out += proto_mode_name(cr.cell.mode);
        out += ',';
        out += cr.cell.esc ? "1" : "0";
        out += ',';
        out += cr.cell.csc ? "1" : "0";
        auto push = [&out](double v) {
            out += ',';
            out += format_g17(v);
        };
        push(wi.empty() ? 0.0 : mean_of(wi));
        push(sample_std_of(wi));
        push(mean_of(cr.a_ose));
        push(sample_std_of(cr.a_ose));
        push(mean_of(cr.known_acc));
        push(sample_std_of(cr.known_acc));
        push(mean_of(cr.ur));
        push(sample_std_of(cr.ur));
        push(median_of(cr.ur));
        push(intra_finite.empty() ? 0.0 : mean_of(intra_finite));
        push(sample_std_of(intra_finite));
        out += ',';
        out += std::to_string(diverged_count);
        out += '\n';
    }
    return out;
}

IncrementalPairing run_incremental_pairing(const RunConfig& cfg,
                                           std::size_t num_seeds) {
    if (num_seeds == 0) {
        throw std::invalid_argument("run_incremental_pairing: num_seeds >= 1");
    }
    if (cfg.num_tasks < 2) {
        throw std::invalid_argument(
            "run_incremental_pairing: needs at least 2 tasks");
    }

    IncrementalPairing pairing;
    for (std::size_t s = 0; s < num_seeds; ++s) {
        const std::uint64_t seed = mix_seed(cfg.seed, kSaltPairing + s);
        pairing.seeds.push_back(seed);

        const FeatureDataset dataset = make_dataset(cfg.data, seed);

        ProtocolConfig pc = make_protocol_config(cfg);
        pc.model.input_dim = dataset.feature_dim;
        pc.seed = seed;

        pc.exemplar_finetune = true;
        const ProtocolResult with = run_protocol(dataset, pc);
        pc.exemplar_finetune = false;
        const ProtocolResult without = run_protocol(dataset, pc);

        const auto& with_acc = with.stages.at(1).report.acc_previous;
        const auto& without_acc = without.stages.at(1).report.acc_previous;
        if (!with_acc || !without_acc) {
            throw NumericError(
                "run_incremental_pairing: stage-2 previous-class accuracy "
                "is absent");
        }
        pairing.acc_prev_with.push_back(*with_acc);
        pairing.acc_prev_without.push_back(*without_acc);
        if (*with_acc > *without_acc) ++pairing.wins;
    }
    return pairing;
}

}  // namespace ocpl
