#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "ocpl/metrics.hpp"
#include "ocpl/trainer.hpp"
#include "oracles.hpp"

using ocpl::Decision;
using ocpl::DumpRow;
using ocpl::PredictionDump;
using ocpl::Vec;

namespace {

DumpRow row(std::int64_t truth, Decision d, std::size_t top,
            double posterior = 0.8, double score = 0.9) {
    DumpRow r;
    r.true_label = truth;
    r.decision = d;
    r.top_known_class = top;
    r.top_known_posterior = posterior;
    r.max_class_score = score;
    return r;
}

}  // namespace

TEST_CASE("unknown recall counts rejected unknowns over unfiltered ones") {
    PredictionDump dump;
    for (int i = 0; i < 8; ++i) dump.push_back(row(ocpl::kUnknownLabel, Decision::Unknown, 0));
    dump.push_back(row(ocpl::kUnknownLabel, Decision::Known, 1));
    dump.push_back(row(ocpl::kUnknownLabel, Decision::Known, 0));
    const auto conf = ocpl::build_confusion(dump, 3);
    const auto ur = ocpl::unknown_recall(conf);
    REQUIRE(ur.has_value());
    CHECK(*ur == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(ocpl::a_ose(conf) == 2);
}

TEST_CASE("unknown recall is absent without unknown ground truth") {
    PredictionDump dump;
    dump.push_back(row(0, Decision::Known, 0));
    dump.push_back(row(1, Decision::Unknown, 0));
    const auto conf = ocpl::build_confusion(dump, 2);
    CHECK_FALSE(ocpl::unknown_recall(conf).has_value());
    CHECK(ocpl::a_ose(conf) == 0);
}

TEST_CASE("unknown recall is absent when every unknown is filtered") {
    PredictionDump dump;
    dump.push_back(row(ocpl::kUnknownLabel, Decision::Filtered, 0));
    dump.push_back(row(0, Decision::Known, 0));
    const auto conf = ocpl::build_confusion(dump, 1);
    CHECK_FALSE(ocpl::unknown_recall(conf).has_value());
}

TEST_CASE("open-space errors sum over the known columns") {
    PredictionDump dump;
    for (int i = 0; i < 3; ++i) dump.push_back(row(ocpl::kUnknownLabel, Decision::Known, 0));
    for (int i = 0; i < 2; ++i) dump.push_back(row(ocpl::kUnknownLabel, Decision::Known, 1));
    dump.push_back(row(ocpl::kUnknownLabel, Decision::Unknown, 0));
    const auto conf = ocpl::build_confusion(dump, 2);
    CHECK(ocpl::a_ose(conf) == 5);
}

TEST_CASE("wildness impact compares closed and open precision") {
    // Closed pass: 10 known decisions, 9 correct.
    PredictionDump closed;
    for (int i = 0; i < 9; ++i) closed.push_back(row(0, Decision::Known, 0));
    closed.push_back(row(1, Decision::Known, 0));
    // Open pass adds 2 unknowns wrongly taken as known: precision 9/12.
    PredictionDump open = closed;
    open.push_back(row(ocpl::kUnknownLabel, Decision::Known, 0));
    open.push_back(row(ocpl::kUnknownLabel, Decision::Known, 2));
    const auto wi = ocpl::wildness_impact(closed, open);
    REQUIRE(wi.has_value());
    CHECK(*wi == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("wildness impact is zero when no unknown is taken as known") {
    PredictionDump closed;
    closed.push_back(row(0, Decision::Known, 0));
    closed.push_back(row(1, Decision::Known, 1));
    PredictionDump open = closed;
    open.push_back(row(ocpl::kUnknownLabel, Decision::Unknown, 0));
    const auto wi = ocpl::wildness_impact(closed, open);
    REQUIRE(wi.has_value());
    CHECK(*wi == 0.0);
}

TEST_CASE("wildness impact is absent without known decisions") {
    PredictionDump closed;
    closed.push_back(row(0, Decision::Unknown, 0));
    PredictionDump open = closed;
    CHECK_FALSE(ocpl::wildness_impact(closed, open).has_value());
}

TEST_CASE("confusion matrix places every decision") {
    PredictionDump dump;
    dump.push_back(row(0, Decision::Known, 0));
    dump.push_back(row(0, Decision::Known, 1));
    dump.push_back(row(1, Decision::Unknown, 0));
    dump.push_back(row(1, Decision::Filtered, 0));
    dump.push_back(row(ocpl::kUnknownLabel, Decision::Known, 1));
    const auto conf = ocpl::build_confusion(dump, 2);
    CHECK(conf.at(0, 0) == 1);
    CHECK(conf.at(0, 1) == 1);
    CHECK(conf.at(1, conf.unknown_col()) == 1);
    CHECK(conf.at(1, conf.filtered_col()) == 1);
    CHECK(conf.at(conf.unknown_row(), 1) == 1);
    CHECK(conf.total() == 5);
    CHECK(conf.row_sum(0) == 2);
    CHECK(conf.row_sum(1) == 2);
}

TEST_CASE("grouped accuracy is a macro mean that skips filtered samples") {
    PredictionDump dump;
    // Class 0: 2/2 correct. Class 1: 1/2. Class 2: one filtered, one correct.
    dump.push_back(row(0, Decision::Known, 0));
    dump.push_back(row(0, Decision::Known, 0));
    dump.push_back(row(1, Decision::Known, 1));
    dump.push_back(row(1, Decision::Known, 0));
    dump.push_back(row(2, Decision::Filtered, 2));
    dump.push_back(row(2, Decision::Known, 2));
    const auto conf = ocpl::build_confusion(dump, 3);

    const auto acc = ocpl::grouped_accuracy(conf, {0}, {1, 2});
    REQUIRE(acc.previous.has_value());
    REQUIRE(acc.current.has_value());
    REQUIRE(acc.both.has_value());
    CHECK(*acc.previous == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(*acc.current == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(*acc.both == doctest::Approx((1.0 + 0.5 + 1.0) / 3.0).epsilon(1e-15));

    const auto no_prev = ocpl::grouped_accuracy(conf, {}, {0, 1, 2});
    CHECK_FALSE(no_prev.previous.has_value());
    REQUIRE(no_prev.both.has_value());

    CHECK_THROWS_AS((void)ocpl::grouped_accuracy(conf, {0, 1}, {1, 2}),
                    std::invalid_argument);
}

TEST_CASE("perfect predictions give unit grouped accuracy") {
    PredictionDump dump;
    for (std::size_t k = 0; k < 3; ++k) {
        dump.push_back(row(std::int64_t(k), Decision::Known, k));
    }
    const auto conf = ocpl::build_confusion(dump, 3);
    const auto acc = ocpl::grouped_accuracy(conf, {0}, {1, 2});
    CHECK(*acc.previous == 1.0);
    CHECK(*acc.current == 1.0);
    CHECK(*acc.both == 1.0);
}

TEST_CASE("compactness on an identity model with one-hot centers") {
    // No trunk, identity projection: embeddings are the raw features.
    ocpl::ModelParams params;
    params.embed_proj = ocpl::Mat(2, 2);
    params.embed_proj(0, 0) = 1.0;
    params.embed_proj(1, 1) = 1.0;
    params.classifier_weights = ocpl::Mat(2, 2);
    params.classifier_weights(0, 0) = 1.0;
    params.classifier_weights(1, 1) = 1.0;
    params.protos = ocpl::init_prototypes(2, 2, ocpl::ProtoMode::FixedFinetuned);

    ocpl::FeatureDataset ds;
    ds.add(Vec{1.0, 0.0}, 0);  // exactly on its center
    ds.add(Vec{0.0, 1.0}, 1);
    const auto c = ocpl::compactness(params, ds);
    CHECK(c.mean_intra_de == 0.0);
    // Center pair (e1, e2): scaled squared distance (1 + 1) / 2.
    CHECK(c.mean_inter_center_dist == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rethresholding a dump replays the acceptance rule") {
    PredictionDump dump;
    dump.push_back(row(0, Decision::Known, 0, 0.7));
    dump.push_back(row(1, Decision::Unknown, 1, 0.7));
    dump.push_back(row(2, Decision::Filtered, 2, 0.99));

    const auto lax = ocpl::rethreshold(dump, 0.5);
    CHECK(lax[0].decision == Decision::Known);
    CHECK(lax[1].decision == Decision::Known);  // 0.7 >= 0.5 flips it back
    CHECK(lax[2].decision == Decision::Filtered);

    const auto strict = ocpl::rethreshold(dump, 0.8);
    CHECK(strict[0].decision == Decision::Unknown);
    CHECK(strict[1].decision == Decision::Unknown);
    CHECK(strict[2].decision == Decision::Filtered);

    const auto zero = ocpl::rethreshold(dump, 0.0);
    CHECK(zero[0].decision == Decision::Known);
    CHECK(zero[1].decision == Decision::Known);
    CHECK(zero[2].decision == Decision::Filtered);
}

TEST_CASE("prediction dump csv round trip") {
    PredictionDump dump;
    DumpRow a = row(2, Decision::Known, 2, 0.987654321, 0.123456789);
    a.sample_id = 0;
    DumpRow b = row(ocpl::kUnknownLabel, Decision::Unknown, 1, 1.0 / 3.0, 0.25);
    b.sample_id = 1;
    DumpRow c = row(0, Decision::Filtered, 0, 1e-17, 1e-3);
    c.sample_id = 2;
    dump = {a, b, c};

    const std::string csv = ocpl::dump_to_csv(dump);
    CHECK(csv.rfind("sample_id,true_label,decision,top_known_class,"
                    "top_known_posterior,max_class_score\n",
                    0) == 0);
    const auto back = ocpl::dump_from_csv_text(csv);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].sample_id == dump[i].sample_id);
        CHECK(back[i].true_label == dump[i].true_label);
        CHECK(back[i].decision == dump[i].decision);
        CHECK(back[i].top_known_class == dump[i].top_known_class);
        CHECK(back[i].top_known_posterior == dump[i].top_known_posterior);
        CHECK(back[i].max_class_score == dump[i].max_class_score);
    }

    const auto path =
        (std::filesystem::temp_directory_path() / "ocpl_dump_rt.csv").string();
    ocpl::save_dump(dump, path);
    const auto from_disk = ocpl::load_dump(path);
    CHECK(ocpl::dump_to_csv(from_disk) == csv);
    std::filesystem::remove(path);
}

TEST_CASE("decision names round trip and reject junk") {
    for (Decision d : {Decision::Known, Decision::Unknown, Decision::Filtered}) {
        CHECK(ocpl::decision_from_name(ocpl::decision_name(d)) == d);
    }
    CHECK_THROWS_AS((void)ocpl::decision_from_name("maybe"), std::invalid_argument);
}

TEST_CASE("assembled report agrees with a brute-force recomputation") {
    PredictionDump dump;
    std::size_t id = 0;
    auto push = [&](std::int64_t truth, Decision d, std::size_t top) {
        DumpRow r = row(truth, d, top);
        r.sample_id = id++;
        dump.push_back(r);
    };
    push(0, Decision::Known, 0);
    push(0, Decision::Known, 1);
    push(0, Decision::Filtered, 0);
    push(1, Decision::Known, 1);
    push(1, Decision::Unknown, 1);
    push(2, Decision::Known, 2);
    push(ocpl::kUnknownLabel, Decision::Known, 0);
    push(ocpl::kUnknownLabel, Decision::Unknown, 2);
    push(ocpl::kUnknownLabel, Decision::Filtered, 1);

    const std::set<std::size_t> prev{0};
    const std::set<std::size_t> cur{1, 2};
    const auto report = ocpl::make_report(dump, 3, prev, cur);
    const auto want = oracle::recompute(dump, 3, prev, cur);

    REQUIRE(report.ur.has_value() == want.ur.has_value());
    CHECK(*report.ur == doctest::Approx(*want.ur).epsilon(1e-15));
    CHECK(report.a_ose == want.a_ose);
    REQUIRE(report.wi.has_value() == want.wi.has_value());
    CHECK(*report.wi == doctest::Approx(*want.wi).epsilon(1e-15));
    CHECK(*report.acc_previous == doctest::Approx(*want.acc_previous).epsilon(1e-15));
    CHECK(*report.acc_current == doctest::Approx(*want.acc_current).epsilon(1e-15));
    CHECK(*report.acc_both == doctest::Approx(*want.acc_both).epsilon(1e-15));

    const auto j = ocpl::report_to_json(report);
    CHECK(j.contains("ur"));
    CHECK(j.contains("confusion"));
    CHECK(j["a_ose"].get<std::size_t>() == want.a_ose);
}

TEST_CASE("report serializes absent metrics as null") {
    PredictionDump dump;
    dump.push_back(row(0, Decision::Known, 0));
    const auto report = ocpl::make_report(dump, 1, {}, {0});
    const auto j = ocpl::report_to_json(report);
    CHECK(j["ur"].is_null());
    CHECK(j["acc_previous"].is_null());
    CHECK_FALSE(j["acc_current"].is_null());
}
