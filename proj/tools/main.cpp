#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ocpl/data.hpp"
#include "ocpl/errors.hpp"
#include "ocpl/experiments.hpp"
#include "ocpl/io_util.hpp"
#include "ocpl/metrics.hpp"
#include "ocpl/model.hpp"
#include "ocpl/protocol.hpp"
#include "ocpl/rng.hpp"
#include "ocpl/run_config.hpp"
#include "ocpl/svg_plot.hpp"
#include "ocpl/trainer.hpp"

namespace {

using namespace ocpl;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

constexpr std::uint64_t kSaltCliModel = 0x636c696d;

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<double> xi;
    std::optional<double> gamma;
    std::optional<double> lambda;
    std::optional<double> alpha;
    std::optional<std::string> proto_mode;
    bool no_esc = false;
    bool no_csc = false;
    std::optional<std::size_t> tasks;
};

RunConfig resolve_config(const Overrides& o) {
    RunConfig cfg;
    if (!o.config_path.empty()) {
        cfg = load_run_config(o.config_path);
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    if (o.xi) cfg.infer.xi = *o.xi;
    if (o.gamma) cfg.infer.gamma = *o.gamma;
    if (o.lambda) cfg.train.lambda = *o.lambda;
    if (o.alpha) cfg.train.alpha = *o.alpha;
    if (o.proto_mode) {
        if (*o.proto_mode == "fixed") {
            cfg.train.proto_mode = ProtoMode::FixedFinetuned;
        } else if (*o.proto_mode == "learnable") {
            cfg.train.proto_mode = ProtoMode::Learnable;
        } else {
            throw ConfigError("--proto-mode must be 'fixed' or 'learnable'");
        }
    }
    if (o.no_esc) cfg.train.lambda = 0.0;
    if (o.no_csc) cfg.classifier = ClassifierKind::InnerProduct;
    if (o.tasks) cfg.num_tasks = *o.tasks;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out_dir);
    return (std::filesystem::path(cfg.out_dir) / name).string();
}

void require_contiguous_labels(const FeatureDataset& dataset) {
    const std::size_t k = dataset.class_labels.size();
    for (std::size_t label : dataset.class_labels) {
        if (label >= k) {
            throw ConfigError(
                "training data labels must be contiguous 0.." +
                std::to_string(k - 1) + "; found label " +
                std::to_string(label) +
                " (relabel the CSV or use a generator source)");
        }
    }
}

int cmd_gen(const RunConfig& cfg) {
    const FeatureDataset dataset = make_dataset(cfg.data, cfg.seed);
    const std::string path = out_path(cfg, "dataset.csv");
    save_csv(dataset, path);
    std::cout << "wrote " << path << " (" << dataset.size() << " samples, "
              << dataset.class_labels.size() << " classes)\n";
    return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
    const FeatureDataset dataset = make_dataset(cfg.data, cfg.seed);
    require_contiguous_labels(dataset);
    const std::size_t num_classes = dataset.class_labels.size();

    ModelParams model =
        make_model(make_model_config(cfg, dataset.feature_dim, num_classes),
                   mix_seed(cfg.seed, kSaltCliModel));
    TrainResult result = train(std::move(model), dataset, cfg.train);

    const std::string params_path = out_path(cfg, "params.bin");
    save_params(result.params, params_path);
    const std::string log_path = out_path(cfg, "train_log.csv");
    atomic_write_file(log_path, result.log.to_csv());

    const EpochRecord& last = result.log.epochs.back();
    std::cout << "wrote " << params_path << " and " << log_path << "\n"
              << "final epoch " << last.epoch << ": accuracy "
              << format_g17(last.accuracy) << ", radius "
              << format_g17(last.radius) << ", mean intra D_e "
              << format_g17(last.mean_intra_de) << "\n";
    return kExitOk;
}

int cmd_openworld(const RunConfig& cfg) {
    const FeatureDataset dataset = make_dataset(cfg.data, cfg.seed);
    ProtocolConfig pc = make_protocol_config(cfg);
    pc.model.input_dim = dataset.feature_dim;

    const ProtocolResult result = run_protocol(dataset, pc);

    const std::string jsonl_path = out_path(cfg, "stages.jsonl");
    atomic_write_file(jsonl_path, result.jsonl);
    for (std::size_t s = 0; s < result.stages.size(); ++s) {
        const std::string tag = "stage_" + std::to_string(s + 1);
        save_params(result.stage_params[s], out_path(cfg, tag + "_params.bin"));
        save_dump(result.stages[s].dump, out_path(cfg, tag + "_dump.csv"));
    }
    std::cout << "wrote " << jsonl_path << " (" << result.stages.size()
              << " stages)\n"
              << result.jsonl;
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& params_path,
             const std::string& data_path) {
    const ModelParams params = load_params(params_path);
    const FeatureDataset dataset = load_csv(data_path);
    if (dataset.feature_dim != params.input_dim()) {
        throw ConfigError("dataset feature_dim " +
                          std::to_string(dataset.feature_dim) +
                          " does not match the model input dim " +
                          std::to_string(params.input_dim()));
    }
    const std::size_t num_known = params.num_classes();

    PredictionDump dump;
    dump.reserve(dataset.samples.size());
    FeatureDataset known_subset;
    known_subset.feature_dim = dataset.feature_dim;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const Sample& s = dataset.samples[i];
        const Prediction pred = infer(params, s.feature, cfg.infer);
        DumpRow row;
        row.sample_id = i;
        if (s.label < num_known) {
            row.true_label = static_cast<std::int64_t>(s.label);
            known_subset.add(s.feature, s.label);
        } else {
            row.true_label = kUnknownLabel;  // labels beyond the model's classes
        }
        row.decision = pred.decision;
        row.top_known_class = pred.known_class;
        row.top_known_posterior = pred.proto_posterior[pred.known_class];
        row.max_class_score =
            *std::max_element(pred.class_scores.begin(), pred.class_scores.end());
        dump.push_back(row);
    }

    std::set<std::size_t> known_ids;
    for (std::size_t k = 0; k < num_known; ++k) known_ids.insert(k);
    MetricsReport report = make_report(dump, num_known, {}, known_ids);
    if (!known_subset.samples.empty()) {
        const Compactness comp = compactness(params, known_subset);
        report.mean_intra_de = comp.mean_intra_de;
        report.mean_inter_center_dist = comp.mean_inter_center_dist;
    }

    const std::string report_path = out_path(cfg, "report.json");
    atomic_write_file(report_path, report_to_json(report).dump(2) + "\n");
    const std::string dump_path = out_path(cfg, "dump.csv");
    save_dump(dump, dump_path);
    std::cout << "wrote " << report_path << " and " << dump_path << "\n"
              << report_to_json(report).dump(2) << "\n";
    return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg) {
    bool all_pass = true;
    auto show = [&all_pass](const GradCheckReport& r) {
        std::cout << "gradcheck " << r.op << ": trials " << r.trials
                  << ", max rel error " << format_g17(r.max_rel_error)
                  << " (tolerance " << format_g17(r.tolerance) << ", worst "
                  << (r.worst_group.empty() ? "-" : r.worst_group) << ") "
                  << (r.pass ? "PASS" : "FAIL") << "\n";
        all_pass = all_pass && r.pass;
    };
    for (const char* op : {"dce_loss", "osr_loss", "cosine_ce_loss"}) {
        show(gradcheck(op, cfg.gradcheck_trials, cfg.gradcheck_step,
                       cfg.gradcheck_tolerance, cfg.seed));
    }
    show(gradcheck_backward(cfg.gradcheck_trials, cfg.gradcheck_step,
                            cfg.gradcheck_tolerance, cfg.seed));
    if (!all_pass) {
        throw NumericError("gradient check failed (see stdout report)");
    }
    return kExitOk;
}

int cmd_ablate(const RunConfig& cfg) {
    const AblationResult result = run_ablation(cfg);
    const std::string json_path = out_path(cfg, "ablation.json");
    atomic_write_file(json_path, ablation_to_json(result).dump(2) + "\n");
    const std::string csv_path = out_path(cfg, "ablation.csv");
    const std::string table = ablation_to_csv(result);
    atomic_write_file(csv_path, table);
    std::cout << "wrote " << json_path << " and " << csv_path << "\n" << table;
    return kExitOk;
}

int cmd_plot(const RunConfig& cfg, const std::string& params_path,
             const std::string& data_path, std::string svg_path) {
    const ModelParams params = load_params(params_path);
    const FeatureDataset dataset = load_csv(data_path);
    if (svg_path.empty()) {
        svg_path = out_path(cfg, "plot.svg");
    }
    atomic_write_file(svg_path, render_embedding_svg(params, dataset, cfg.infer));
    std::cout << "wrote " << svg_path << "\n";
    return kExitOk;
}

void print_error(const char* type, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = {{"type", type}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-clustering open-set recognition testbed"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config_path, "JSON run configuration");
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--out", o.out_dir, "output directory");
    app.add_option("--xi", o.xi, "prototype-posterior acceptance threshold");
    app.add_option("--gamma", o.gamma, "classification-score filter threshold");
    app.add_option("--lambda", o.lambda, "hinge-loss weight");
    app.add_option("--alpha", o.alpha, "cosine logit scale");
    app.add_option("--proto-mode", o.proto_mode,
                   "prototype mode: fixed or learnable");
    app.add_flag("--no-esc", o.no_esc, "disable the radius hinge (lambda = 0)");
    app.add_flag("--no-csc", o.no_csc,
                 "replace the cosine classifier with a plain inner product");
    app.add_option("--tasks", o.tasks, "number of incremental tasks");

    CLI::App* gen = app.add_subcommand("gen", "emit a synthetic dataset CSV");
    CLI::App* train_cmd =
        app.add_subcommand("train", "single-stage closed-set training");
    CLI::App* openworld =
        app.add_subcommand("openworld", "multi-stage incremental protocol");

    CLI::App* eval_cmd =
        app.add_subcommand("eval", "evaluate saved parameters on a dataset");
    std::string eval_params, eval_data;
    eval_cmd->add_option("--params", eval_params, "parameter file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset CSV")->required();

    CLI::App* gradcheck_cmd = app.add_subcommand(
        "gradcheck", "verify analytic gradients against finite differences");
    CLI::App* ablate =
        app.add_subcommand("ablate", "module on/off grid over several seeds");

    CLI::App* plot = app.add_subcommand("plot", "SVG embedding scatter");
    std::string plot_params, plot_data, plot_svg;
    plot->add_option("--params", plot_params, "parameter file")->required();
    plot->add_option("--data", plot_data, "dataset CSV")->required();
    plot->add_option("--svg", plot_svg, "output SVG path (default OUT/plot.svg)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help and friends
        }
        print_error("usage", e.what());
        return kExitConfig;
    }

    try {
        const RunConfig cfg = resolve_config(o);
        if (gen->parsed()) return cmd_gen(cfg);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (openworld->parsed()) return cmd_openworld(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg, eval_params, eval_data);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(cfg);
        if (ablate->parsed()) return cmd_ablate(cfg);
        if (plot->parsed()) return cmd_plot(cfg, plot_params, plot_data, plot_svg);
        print_error("usage", "no subcommand given");
        return kExitConfig;
    } catch (const ConfigError& e) {
        print_error("config", e.what());
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        print_error("config", e.what());
        return kExitConfig;
    } catch (const NumericError& e) {
        print_error("numeric", e.what());
        return kExitNumeric;
    } catch (const IoError& e) {
        print_error("io", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return kExitConfig;
    }
}
