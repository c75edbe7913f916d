// Acceptance harness: one named criterion per function, one PASS/FAIL line
// per criterion on stdout. With no arguments every criterion runs; otherwise
// only the named ones do. Exit status is nonzero when any executed criterion
// fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocpl/data.hpp"
#include "ocpl/experiments.hpp"
#include "ocpl/io_util.hpp"
#include "ocpl/losses.hpp"
#include "ocpl/metrics.hpp"
#include "ocpl/model.hpp"
#include "ocpl/protocol.hpp"
#include "ocpl/run_config.hpp"
#include "ocpl/trainer.hpp"
#include "oracles.hpp"

#ifndef OCPL_CLI_PATH
#error "OCPL_CLI_PATH must point at the command line binary"
#endif

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "ocpl_acceptance";
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string log = (scratch_dir() / "cli_log.txt").string();
    const std::string cmd =
        std::string(OCPL_CLI_PATH) + " " + args + " >" + log + " 2>&1";
    const int raw = std::system(cmd.c_str());
    return (raw >= 0 && (raw & 0x7f) == 0) ? ((raw >> 8) & 0xff) : -1;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

// Random small model shared by the oracle and normalization criteria.
ocpl::ModelParams random_model(std::mt19937_64& eng) {
    std::uniform_int_distribution<std::size_t> dim(2, 6);
    std::uniform_int_distribution<int> coin(0, 1);
    ocpl::ModelConfig cfg;
    cfg.input_dim = dim(eng);
    const std::size_t depth = std::uniform_int_distribution<std::size_t>(0, 2)(eng);
    for (std::size_t l = 0; l < depth; ++l) cfg.hidden_dims.push_back(dim(eng) + 2);
    cfg.num_classes = dim(eng);
    cfg.embed_dim = std::max(dim(eng), cfg.num_classes);
    cfg.proto_mode =
        coin(eng) ? ocpl::ProtoMode::Learnable : ocpl::ProtoMode::FixedFinetuned;
    cfg.classifier_kind = coin(eng) ? ocpl::ClassifierKind::Cosine
                                    : ocpl::ClassifierKind::InnerProduct;
    cfg.alpha = std::uniform_real_distribution<double>(1.0, 16.0)(eng);

    ocpl::ModelParams params = ocpl::make_model(cfg, eng());
    params.protos = ocpl::init_prototypes(cfg.num_classes, cfg.embed_dim,
                                          cfg.proto_mode, eng());
    params.protos.radius = std::uniform_real_distribution<double>(0.0, 1.5)(eng);
    return params;
}

// The reference desk-scale configuration: 5 known + 3 unknown well-separated
// blob classes in 8 dimensions, 200 samples per class. Experiments train for
// 30 epochs: the blobs are linearly separable, so accuracy saturates early,
// and much longer schedules keep inflating the embedding scale until known
// posteriors round to exactly 1.0 and no threshold can separate them from
// unknowns.
ocpl::RunConfig reference_config() {
    ocpl::RunConfig cfg;
    cfg.data.num_classes = 8;
    cfg.data.samples_per_class = 200;
    cfg.data.feature_dim = 8;
    cfg.known_classes = 5;
    cfg.unknown_classes = 3;
    cfg.train.epochs = 30;
    cfg.train.warmup_epochs = 15;
    return cfg;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
    const auto start = Clock::now();
    double worst = 0.0;
    std::string worst_op;
    for (const char* op : {"dce_loss", "osr_loss", "cosine_ce_loss"}) {
        const auto report = ocpl::gradcheck(op, 100, 1e-5, 1e-4, 40);
        if (!report.pass) {
            return {false, std::string(op) + " rel error " +
                               fmt(report.max_rel_error) + " in group " +
                               report.worst_group};
        }
        if (report.max_rel_error > worst) {
            worst = report.max_rel_error;
            worst_op = report.op;
        }
    }
    const auto backward = ocpl::gradcheck_backward(100, 1e-5, 1e-4, 41);
    if (!backward.pass) {
        return {false, "backward rel error " + fmt(backward.max_rel_error) +
                           " in group " + backward.worst_group};
    }
    if (backward.max_rel_error > worst) {
        worst = backward.max_rel_error;
        worst_op = "backward";
    }

    const int cli = run_cli("gradcheck");
    if (cli != 0) {
        return {false, "cli gradcheck exited with " + std::to_string(cli)};
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 60.0) {
        return {false, "took " + fmt(elapsed) + "s (budget 60s)"};
    }
    return {true, "4 ops x 100 configs, worst rel error " + fmt(worst) + " (" +
                      worst_op + "), " + fmt(elapsed) + "s"};
}

Outcome oracle_equivalence() {
    std::mt19937_64 eng(515);
    std::uniform_real_distribution<double> coord(-3.0, 3.0);
    std::uniform_real_distribution<double> gamma_draw(0.0, 0.5);
    std::uniform_real_distribution<double> xi_draw(0.0, 1.0);

    for (int t = 0; t < 1000; ++t) {
        const ocpl::ModelParams params = random_model(eng);
        ocpl::Vec x(params.input_dim());
        for (double& v : x) v = coord(eng);
        ocpl::InferenceConfig icfg;
        icfg.gamma = gamma_draw(eng);
        icfg.xi = xi_draw(eng);

        const auto got = ocpl::infer(params, x, icfg);
        const auto want = oracle::decide(params, x, icfg.gamma, icfg.xi);
        const bool same =
            (got.decision == ocpl::Decision::Known &&
             want.kind == oracle::NaiveDecision::kKnown &&
             got.known_class == want.cls) ||
            (got.decision == ocpl::Decision::Unknown &&
             want.kind == oracle::NaiveDecision::kUnknown) ||
            (got.decision == ocpl::Decision::Filtered &&
             want.kind == oracle::NaiveDecision::kFiltered);
        if (!same) {
            return {false, "decision mismatch at triple " + std::to_string(t)};
        }
    }

    // Metric reports must be recomputable from their dumps alone.
    const auto data = ocpl::gen_gaussian_blobs(4, 40, 4, 3.0, 0.25, 77);
    ocpl::ProtocolConfig pcfg;
    pcfg.model.input_dim = 4;
    pcfg.model.hidden_dims = {8};
    pcfg.model.embed_dim = 6;
    pcfg.train.epochs = 12;
    pcfg.train.warmup_epochs = 3;
    pcfg.train.finetune_period_epochs = 4;
    pcfg.num_tasks = 2;
    pcfg.exemplars_per_class = 5;
    pcfg.seed = 77;
    const auto result = ocpl::run_protocol(data, pcfg);
    std::size_t next_id = 0;
    for (std::size_t s = 0; s < result.stages.size(); ++s) {
        std::set<std::size_t> prev, cur;
        next_id = 0;
        for (std::size_t t = 0; t <= s; ++t) {
            for (std::size_t label : result.schedule.tasks[t]) {
                (void)label;
                (t < s ? prev : cur).insert(next_id++);
            }
        }
        const auto want = oracle::recompute(result.stages[s].dump, next_id, prev, cur);
        const auto& got = result.stages[s].report;
        const bool ok =
            got.ur == want.ur && got.a_ose == want.a_ose && got.wi == want.wi &&
            got.acc_previous == want.acc_previous &&
            got.acc_current == want.acc_current && got.acc_both == want.acc_both;
        if (!ok) {
            return {false, "stage " + std::to_string(s) +
                               " report disagrees with its dump recomputation"};
        }
    }
    return {true, "1000/1000 decisions agree; stage reports recompute exactly"};
}

Outcome normalization_monotonicity() {
    std::mt19937_64 eng(626);
    std::uniform_real_distribution<double> coord(-3.0, 3.0);
    double worst_sum_err = 0.0;
    for (int t = 0; t < 300; ++t) {
        const ocpl::ModelParams params = random_model(eng);
        ocpl::Vec x(params.input_dim());
        for (double& v : x) v = coord(eng);
        const auto pred = ocpl::infer(params, x, {});
        double s1 = 0.0, s2 = 0.0;
        for (double v : pred.class_scores) s1 += v;
        for (double v : pred.proto_posterior) s2 += v;
        worst_sum_err = std::max({worst_sum_err, std::abs(s1 - 1.0),
                                  std::abs(s2 - 1.0)});
    }
    if (worst_sum_err >= 1e-9) {
        return {false, "probability sum off by " + fmt(worst_sum_err)};
    }

    // Threshold sweeps on two fixed dumps: one synthetic with 4 known
    // classes, one from a trained open-set evaluation with 5.
    std::vector<std::pair<ocpl::PredictionDump, std::size_t>> dumps;
    {
        ocpl::PredictionDump synthetic;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_int_distribution<int> truth(-1, 3);
        for (std::size_t i = 0; i < 1000; ++i) {
            ocpl::DumpRow r;
            r.sample_id = i;
            r.true_label = truth(eng);
            r.top_known_class = std::uniform_int_distribution<std::size_t>(0, 3)(eng);
            r.top_known_posterior = unit(eng);
            r.max_class_score = unit(eng);
            r.decision = r.max_class_score < 0.05 ? ocpl::Decision::Filtered
                                                  : ocpl::Decision::Known;
            synthetic.push_back(r);
        }
        dumps.emplace_back(std::move(synthetic), 4);
    }
    {
        ocpl::RunConfig cfg = reference_config();
        cfg.data.samples_per_class = 60;
        cfg.train.epochs = 25;
        cfg.train.warmup_epochs = 5;
        const auto open = ocpl::run_open_set_experiment(
            cfg, 9, ocpl::ProtoMode::FixedFinetuned, cfg.train.lambda,
            ocpl::ClassifierKind::Cosine);
        dumps.emplace_back(open.dump, cfg.known_classes);
    }

    for (std::size_t d = 0; d < dumps.size(); ++d) {
        std::optional<double> prev_ur;
        std::optional<std::size_t> prev_aose;
        for (int i = 0; i <= 9; ++i) {
            const double xi = 0.1 * i;
            const auto swept = ocpl::rethreshold(dumps[d].first, xi);
            const auto conf = ocpl::build_confusion(swept, dumps[d].second);
            const auto ur = ocpl::unknown_recall(conf);
            const std::size_t aose = ocpl::a_ose(conf);
            if (prev_ur && ur && *ur < *prev_ur - 1e-12) {
                return {false, "UR fell from " + fmt(*prev_ur) + " to " +
                                   fmt(*ur) + " at xi=" + fmt(xi) + " (dump " +
                                   std::to_string(d) + ")"};
            }
            if (prev_aose && aose > *prev_aose) {
                return {false, "A-OSE rose at xi=" + fmt(xi) + " (dump " +
                                   std::to_string(d) + ")"};
            }
            if (ur) prev_ur = ur;
            prev_aose = aose;
        }
    }
    return {true, "sums within 1e-9 over 300 models; UR/A-OSE monotone over "
                  "xi sweep on 2 dumps"};
}

Outcome hypersphere_convergence() {
    const auto start = Clock::now();
    const auto data = ocpl::gen_gaussian_blobs(5, 200, 8, 3.0, 0.3, 11);

    ocpl::ModelConfig mc;
    mc.input_dim = 8;
    mc.hidden_dims = {32, 16};
    mc.embed_dim = 8;
    mc.num_classes = 5;
    ocpl::ModelParams params = ocpl::make_model(mc, 12);
    params.protos =
        ocpl::init_prototypes(5, 8, ocpl::ProtoMode::FixedFinetuned, 12);

    ocpl::TrainConfig tcfg;  // reference defaults: 100 epochs, lr 0.05, lambda 0.1
    tcfg.seed = 13;
    const auto res = ocpl::train(params, data, tcfg);

    const double final_r = res.params.protos.radius;
    double lo = final_r, hi = final_r;
    const std::size_t n = res.log.epochs.size();
    for (std::size_t e = n - 10; e < n; ++e) {
        lo = std::min(lo, res.log.epochs[e].radius);
        hi = std::max(hi, res.log.epochs[e].radius);
    }
    const double range_frac = (hi - lo) / final_r;
    const double contained = ocpl::containment_fraction(res.params, data, 1.1);
    const double elapsed = seconds_since(start);

    if (!(final_r > 0.0)) return {false, "final radius " + fmt(final_r)};
    if (!(range_frac < 0.05)) {
        return {false, "last-10-epoch radius range is " + fmt(100.0 * range_frac) +
                           "% of the final value"};
    }
    if (!(contained >= 0.9)) {
        return {false, "only " + fmt(100.0 * contained) +
                           "% of training embeddings inside 1.1R"};
    }
    if (elapsed >= 120.0) {
        return {false, "took " + fmt(elapsed) + "s (budget 120s)"};
    }
    return {true, "R=" + fmt(final_r) + ", last-10 range " +
                      fmt(100.0 * range_frac) + "%, containment " +
                      fmt(100.0 * contained) + "%, " + fmt(elapsed) + "s"};
}

Outcome open_set_separation() {
    const ocpl::RunConfig cfg = reference_config();
    const auto res = ocpl::run_open_set_experiment(
        cfg, 7, ocpl::ProtoMode::FixedFinetuned, cfg.train.lambda,
        ocpl::ClassifierKind::Cosine);
    if (!res.known_acc) return {false, "no known-class accuracy measured"};
    if (!res.ur) return {false, "no unknown recall measured"};
    const bool pass = *res.known_acc >= 0.90 && *res.ur >= 0.70;
    return {pass, "known acc " + fmt(*res.known_acc) + ", UR " + fmt(*res.ur) +
                      " at xi=" + fmt(res.xi)};
}

Outcome ablation_trend() {
    ocpl::RunConfig cfg = reference_config();
    cfg.ablation_seeds = 5;
    cfg.seed = 8;
    const auto result = ocpl::run_ablation(cfg);

    std::map<std::string, const ocpl::AblationCellResult*> by_name;
    for (const auto& cell : result.cells) by_name[cell.cell.name] = &cell;
    for (const char* need : {"learnable", "learnable+esc", "fixed", "fixed+esc",
                             "fixed+esc+csc"}) {
        if (!by_name.count(need)) return {false, std::string("missing cell ") + need};
    }

    // (a) With the compression hinge on, intra-class spread shrinks for most
    // seeds, comparing cells that differ only in that switch.
    auto esc_wins = [&](const char* off, const char* on) {
        const auto& a = *by_name[off];
        const auto& b = *by_name[on];
        std::size_t wins = 0;
        for (std::size_t s = 0; s < result.seeds.size(); ++s) {
            wins += (b.mean_intra_de[s] < a.mean_intra_de[s]);
        }
        return wins;
    };
    const std::size_t wins_fixed = esc_wins("fixed", "fixed+esc");
    const std::size_t wins_learnable = esc_wins("learnable", "learnable+esc");
    const std::size_t majority = result.seeds.size() / 2 + 1;
    if (wins_fixed < majority || wins_learnable < majority) {
        return {false, "hinge tightened clusters in only " +
                           std::to_string(wins_fixed) + "/5 (fixed) and " +
                           std::to_string(wins_learnable) + "/5 (learnable) seeds"};
    }

    // (b) The full configuration has the best median unknown recall.
    double full_median = 0.0;
    double best_other = -1.0;
    std::string best_other_name;
    for (const auto& cell : result.cells) {
        const double med = ocpl::median_of(cell.ur);
        if (cell.cell.name == "fixed+esc+csc") {
            full_median = med;
        } else if (med > best_other) {
            best_other = med;
            best_other_name = cell.cell.name;
        }
    }
    if (full_median < best_other) {
        return {false, "median UR " + fmt(full_median) + " (full) < " +
                           fmt(best_other) + " (" + best_other_name + ")"};
    }
    return {true, "hinge wins " + std::to_string(wins_fixed) + "/5 and " +
                      std::to_string(wins_learnable) +
                      "/5 seeds; full-config median UR " + fmt(full_median) +
                      " vs next best " + fmt(best_other)};
}

Outcome incremental_protocol() {
    ocpl::RunConfig cfg = reference_config();
    cfg.num_tasks = 2;
    cfg.seed = 3;
    const auto pairing = ocpl::run_incremental_pairing(cfg, 5);
    std::string detail = "stage-1-class accuracy with/without replay:";
    for (std::size_t s = 0; s < pairing.seeds.size(); ++s) {
        detail += " " + fmt(pairing.acc_prev_with[s]) + "/" +
                  fmt(pairing.acc_prev_without[s]);
    }
    const bool pass = pairing.wins >= 4;
    return {pass, std::to_string(pairing.wins) + "/5 paired seeds improve; " +
                      detail};
}

Outcome determinism() {
    const fs::path dir = scratch_dir();
    const std::string cfg_path = (dir / "det_config.json").string();
    ocpl::atomic_write_file(cfg_path, R"({
        "seed": 21,
        "data": {"num_classes": 8, "samples_per_class": 30, "feature_dim": 6},
        "model": {"hidden_dims": [16, 8], "embed_dim": 8},
        "train": {"epochs": 15, "batch_size": 16, "warmup_epochs": 4,
                  "finetune_period_epochs": 5},
        "protocol": {"num_tasks": 4, "exemplars_per_class": 10}
    })");
    const std::string out_a = (dir / "det_a").string();
    const std::string out_b = (dir / "det_b").string();
    fs::remove_all(out_a);
    fs::remove_all(out_b);
    for (const std::string& out : {out_a, out_b}) {
        const int code =
            run_cli("openworld --config " + cfg_path + " --out " + out);
        if (code != 0) {
            return {false, "openworld run exited with " + std::to_string(code)};
        }
    }
    const std::string a = ocpl::read_file(out_a + "/stages.jsonl");
    const std::string b = ocpl::read_file(out_b + "/stages.jsonl");
    if (a != b) return {false, "stage reports differ between identical runs"};
    if (a.empty() || std::count(a.begin(), a.end(), '\n') != 4) {
        return {false, "expected 4 stage lines"};
    }
    return {true, "two openworld runs produced byte-identical stage reports (" +
                      std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient_fidelity", gradient_fidelity},
        {"oracle_equivalence", oracle_equivalence},
        {"normalization_monotonicity", normalization_monotonicity},
        {"hypersphere_convergence", hypersphere_convergence},
        {"open_set_separation", open_set_separation},
        {"ablation_trend", ablation_trend},
        {"incremental_protocol", incremental_protocol},
        {"determinism", determinism},
    };

    std::vector<std::string> selected;
    for (int i = 1; i < argc; ++i) selected.emplace_back(argv[i]);

    bool all_pass = true;
    bool any_run = false;
    for (const auto& [name, fn] : criteria) {
        if (!selected.empty() &&
            std::find(selected.begin(), selected.end(), name) == selected.end()) {
            continue;
        }
        any_run = true;
        Outcome outcome;
        try {
            outcome = fn();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (outcome.pass ? "PASS " : "FAIL ") << name << " — "
                  << outcome.detail << "\n";
        all_pass = all_pass && outcome.pass;
    }
    if (!any_run) {
        std::cerr << "no matching criterion; known names:";
        for (const auto& [name, fn] : criteria) std::cerr << " " << name;
        std::cerr << "\n";
        return 2;
    }
    return all_pass ? 0 : 1;
}
