#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "ocpl/losses.hpp"
#include "oracles.hpp"

using ocpl::Mat;
using ocpl::PrototypeSet;
using ocpl::Vec;

namespace {

PrototypeSet make_protos(std::size_t k, std::size_t d, ocpl::ProtoMode mode) {
    PrototypeSet p;
    p.centers = Mat(k, d);
    p.mode = mode;
    return p;
}

PrototypeSet random_protos(std::mt19937_64& eng, std::size_t k, std::size_t d) {
    PrototypeSet p = make_protos(k, d, ocpl::ProtoMode::Learnable);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    for (double& v : p.centers.data) v = coord(eng);
    std::uniform_real_distribution<double> rad(0.0, 2.0);
    p.radius = rad(eng);
    return p;
}

Vec random_vec(std::mt19937_64& eng, std::size_t d, double lo = -2.0,
               double hi = 2.0) {
    std::uniform_real_distribution<double> coord(lo, hi);
    Vec f(d);
    for (double& v : f) v = coord(eng);
    return f;
}

}  // namespace

TEST_CASE("clustering loss is log K when all centers are equidistant") {
    for (std::size_t k : {2u, 3u, 5u, 8u}) {
        PrototypeSet p = make_protos(k, k, ocpl::ProtoMode::Learnable);
        for (std::size_t i = 0; i < k; ++i) p.centers(i, i) = 1.0;
        Vec f(k, 0.0);
        const auto res = ocpl::dce_loss(f, 1 % k, p);
        CHECK(res.value == doctest::Approx(std::log(double(k))).epsilon(1e-12));
        CHECK_FALSE(res.clamped);
    }
}

TEST_CASE("clustering loss value at a 0.9 posterior") {
    // Two centers on the x axis with the feature at the origin: the distances
    // are 0 and log 9, so the label posterior is exactly 0.9.
    PrototypeSet p = make_protos(2, 2, ocpl::ProtoMode::Learnable);
    p.centers(1, 0) = std::sqrt(2.0 * std::log(9.0));
    Vec f{0.0, 0.0};
    const auto res = ocpl::dce_loss(f, 0, p);
    CHECK(res.value == doctest::Approx(0.10536051565782630).epsilon(1e-12));
}

TEST_CASE("clustering loss gradient matches finite differences tightly") {
    // Finite differences at step 1e-5 resolve an O(1) loss to roughly 1e-10
    // absolute, so a 1e-6 relative bar needs every probed entry well above
    // that noise: embeddings sit near their own center, configurations with
    // a starved posterior are redrawn, and entries whose true derivative is
    // below 1e-3 are not compared.
    std::mt19937_64 eng(2024);
    std::uniform_int_distribution<std::size_t> dim(2, 8);
    std::uniform_real_distribution<double> center_coord(-1.0, 1.0);
    std::uniform_real_distribution<double> near(-0.7, 0.7);
    double worst = 0.0;
    int accepted = 0;
    for (int attempt = 0; accepted < 100 && attempt < 100000; ++attempt) {
        const std::size_t d = dim(eng), k = dim(eng);
        PrototypeSet p = make_protos(k, d, ocpl::ProtoMode::Learnable);
        for (double& v : p.centers.data) v = center_coord(eng);
        p.radius = 0.5;
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        const std::size_t label = pick(eng);
        Vec f(d);
        for (std::size_t i = 0; i < d; ++i) f[i] = p.centers(label, i) + near(eng);

        Vec dists(k);
        for (std::size_t r = 0; r < k; ++r) {
            const auto row = p.centers.row(r);
            const Vec center(row.begin(), row.end());
            dists[r] = oracle::proto_distance(f, center, d);
        }
        const Vec post = oracle::softmax_neg(dists);
        const double lo = *std::min_element(post.begin(), post.end());
        const double hi = *std::max_element(post.begin(), post.end());
        if (lo < 1e-3 || 1.0 - hi < 1e-3) continue;
        ++accepted;

        const auto res = ocpl::dce_loss(f, label, p);
        for (std::size_t i = 0; i < d; ++i) {
            const double fd = oracle::central_diff(
                [&] { return ocpl::dce_loss(f, label, p).value; }, f[i], 1e-5);
            if (std::abs(fd) < 1e-3 && std::abs(res.grad.wrt_embedding[i]) < 1e-3) {
                continue;
            }
            worst = std::max(worst, oracle::rel_err(fd, res.grad.wrt_embedding[i]));
        }
        for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                const double fd = oracle::central_diff(
                    [&] { return ocpl::dce_loss(f, label, p).value; },
                    p.centers(r, c), 1e-5);
                if (std::abs(fd) < 1e-3 &&
                    std::abs(res.grad.wrt_centers(r, c)) < 1e-3) {
                    continue;
                }
                worst = std::max(worst, oracle::rel_err(fd, res.grad.wrt_centers(r, c)));
            }
        }
    }
    REQUIRE(accepted == 100);
    CHECK(worst < 1e-6);
}

TEST_CASE("clustering loss is invariant to permuting classes with the label") {
    std::mt19937_64 eng(5150);
    for (int t = 0; t < 50; ++t) {
        const std::size_t k = 4, d = 3;
        PrototypeSet p = random_protos(eng, k, d);
        Vec f = random_vec(eng, d);
        const std::size_t label = 2;

        std::vector<std::size_t> perm{2, 0, 3, 1};
        PrototypeSet q = make_protos(k, d, ocpl::ProtoMode::Learnable);
        q.radius = p.radius;
        for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t c = 0; c < d; ++c) q.centers(perm[r], c) = p.centers(r, c);
        }
        const double a = ocpl::dce_loss(f, label, p).value;
        const double b = ocpl::dce_loss(f, perm[label], q).value;
        CHECK(std::abs(a - b) < 1e-12);
    }
}

TEST_CASE("one gradient step on the feature decreases the clustering loss") {
    std::mt19937_64 eng(99);
    std::uniform_int_distribution<std::size_t> dim(2, 8);
    int checked = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = dim(eng), k = dim(eng);
        PrototypeSet p = random_protos(eng, k, d);
        Vec f = random_vec(eng, d);
        const std::size_t label = 0;
        const auto res = ocpl::dce_loss(f, label, p);
        double gnorm2 = 0.0;
        for (double g : res.grad.wrt_embedding) gnorm2 += g * g;
        if (gnorm2 < 1e-10) continue;  // already at a stationary point
        Vec stepped = f;
        const double eta = 1e-4;
        for (std::size_t i = 0; i < d; ++i) stepped[i] -= eta * res.grad.wrt_embedding[i];
        CHECK(ocpl::dce_loss(stepped, label, p).value < res.value);
        ++checked;
    }
    CHECK(checked > 50);
}

TEST_CASE("clustering loss floors an underflowing posterior") {
    PrototypeSet p = make_protos(2, 1, ocpl::ProtoMode::Learnable);
    p.centers(0, 0) = 40.0;  // distance 1600 vs 0: the label posterior underflows
    p.centers(1, 0) = 0.0;
    Vec f{0.0};
    const auto res = ocpl::dce_loss(f, 0, p);
    CHECK(res.clamped);
    CHECK(std::isfinite(res.value));
    CHECK(res.value == doctest::Approx(-std::log(1e-30)).epsilon(1e-12));
}

TEST_CASE("hinge loss is zero with zero gradients inside the sphere") {
    PrototypeSet p = make_protos(1, 2, ocpl::ProtoMode::Learnable);
    p.centers(0, 1) = 1.0;
    p.radius = 1.0;

    // Strictly inside.
    Vec at_center{0.0, 1.0};
    auto res = ocpl::osr_loss(at_center, 0, p);
    CHECK(res.value == 0.0);
    CHECK(res.grad.wrt_radius == 0.0);
    for (double g : res.grad.wrt_embedding) CHECK(g == 0.0);

    // Exactly on the boundary: D_e = 1 = R counts as inactive.
    Vec boundary{1.0, 0.0};
    CHECK(ocpl::euclidean_sq_scaled(boundary, Vec{0.0, 1.0}, 2) == 1.0);
    res = ocpl::osr_loss(boundary, 0, p);
    CHECK(res.value == 0.0);
    CHECK(res.grad.wrt_radius == 0.0);
    for (double g : res.grad.wrt_embedding) CHECK(g == 0.0);
}

TEST_CASE("hinge loss outside the sphere") {
    // D_e = (5 + 0)/2 = 2.5 against a radius of 1.
    PrototypeSet p = make_protos(1, 2, ocpl::ProtoMode::Learnable);
    p.radius = 1.0;
    Vec f{std::sqrt(5.0), 0.0};
    const auto res = ocpl::osr_loss(f, 0, p);
    CHECK(res.value == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(res.grad.wrt_radius == -1.0);
    CHECK(res.grad.wrt_embedding[0] ==
          doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));
    CHECK(res.grad.wrt_embedding[1] == 0.0);
}

TEST_CASE("hinge loss with zero radius is the spread distance itself") {
    PrototypeSet p = make_protos(1, 2, ocpl::ProtoMode::Learnable);
    p.radius = 0.0;
    Vec f{1.0, 0.0};
    p.centers(0, 0) = 0.0;
    p.centers(0, 1) = 1.0;
    const auto res = ocpl::osr_loss(f, 0, p);
    CHECK(res.value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(res.value > 0.0);
}

TEST_CASE("hinge loss is nonincreasing in the radius") {
    std::mt19937_64 eng(4242);
    for (int t = 0; t < 50; ++t) {
        PrototypeSet p = random_protos(eng, 3, 4);
        Vec f = random_vec(eng, 4);
        double prev = std::numeric_limits<double>::infinity();
        for (double r = 0.0; r <= 3.0; r += 0.25) {
            p.radius = r;
            const double v = ocpl::osr_loss(f, 1, p).value;
            CHECK(v <= prev + 1e-15);
            prev = v;
        }
    }
}

TEST_CASE("combined prototype loss with zero weight reproduces the clustering loss bitwise") {
    std::mt19937_64 eng(314);
    for (int t = 0; t < 50; ++t) {
        PrototypeSet p = random_protos(eng, 4, 5);
        Vec f = random_vec(eng, 5);
        const auto dce = ocpl::dce_loss(f, 2, p);
        const auto combined = ocpl::proto_loss(f, 2, p, 0.0);
        CHECK(combined.breakdown.total == dce.value);
        CHECK(combined.breakdown.dce == dce.value);
        CHECK(combined.grad.wrt_radius == dce.grad.wrt_radius);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(combined.grad.wrt_embedding[i] == dce.grad.wrt_embedding[i]);
        }
        for (std::size_t i = 0; i < combined.grad.wrt_centers.data.size(); ++i) {
            CHECK(combined.grad.wrt_centers.data[i] == dce.grad.wrt_centers.data[i]);
        }
    }
}

TEST_CASE("combined prototype loss sums the weighted parts") {
    std::mt19937_64 eng(2718);
    for (int t = 0; t < 50; ++t) {
        PrototypeSet p = random_protos(eng, 3, 3);
        Vec f = random_vec(eng, 3);
        const double lambda = 0.37;
        const auto dce = ocpl::dce_loss(f, 1, p);
        const auto osr = ocpl::osr_loss(f, 1, p);
        const auto combined = ocpl::proto_loss(f, 1, p, lambda);
        CHECK(combined.breakdown.dce == dce.value);
        CHECK(combined.breakdown.osr == osr.value);
        CHECK(combined.breakdown.total ==
              doctest::Approx(dce.value + lambda * osr.value).epsilon(1e-15));
        CHECK(combined.grad.wrt_radius ==
              doctest::Approx(lambda * osr.grad.wrt_radius).epsilon(1e-15));
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(combined.grad.wrt_embedding[i] ==
                  doctest::Approx(dce.grad.wrt_embedding[i] +
                                  lambda * osr.grad.wrt_embedding[i])
                      .epsilon(1e-14));
        }
    }
}

TEST_CASE("fixed prototypes receive no center gradients") {
    PrototypeSet p = make_protos(2, 3, ocpl::ProtoMode::FixedFinetuned);
    p.centers(0, 0) = 1.0;
    p.centers(1, 1) = 1.0;
    Vec f{0.4, -0.2, 0.9};
    const auto res = ocpl::proto_loss(f, 0, p, 0.5);
    REQUIRE(res.grad.wrt_centers.data.size() == 6);
    for (double g : res.grad.wrt_centers.data) CHECK(g == 0.0);
}

TEST_CASE("similarity cross entropy on an aligned and an orthogonal weight row") {
    Mat w(2, 2);
    w(0, 0) = 1.0;  // parallel to the feature
    w(1, 1) = 1.0;  // orthogonal to it
    Vec f{2.0, 0.0};
    const auto res = ocpl::cosine_ce_loss(f, 0, w, 1.0);
    // Logits are (1, 0), so the loss is log(1 + e^{-1}).
    CHECK(res.value == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
}

TEST_CASE("similarity cross entropy is log K when all weight rows coincide") {
    for (std::size_t k : {2u, 4u, 7u}) {
        Mat w(k, 3);
        for (std::size_t r = 0; r < k; ++r) {
            w(r, 0) = 0.3;
            w(r, 1) = -1.1;
            w(r, 2) = 0.7;
        }
        Vec f{1.0, 2.0, -0.5};
        const auto res = ocpl::cosine_ce_loss(f, k - 1, w, 16.0);
        CHECK(res.value == doctest::Approx(std::log(double(k))).epsilon(1e-12));
    }
}

TEST_CASE("similarity cross entropy gradients match finite differences") {
    std::mt19937_64 eng(808);
    std::uniform_int_distribution<std::size_t> dim(2, 8);
    std::uniform_real_distribution<double> alpha_draw(1.0, 16.0);

    // Rows cluster around a shared direction so alpha times the logit spread
    // cannot starve any class posterior; norms near 1.5 keep the 1/|w|
    // curvature small at the probing step.  Entries whose true derivative is
    // under 1e-3 sit too close to the difference-quotient noise for a 1e-5
    // bar and are not compared.
    for (ocpl::ClassifierKind kind :
         {ocpl::ClassifierKind::Cosine, ocpl::ClassifierKind::InnerProduct}) {
        double worst = 0.0;
        int accepted = 0;
        for (int attempt = 0; accepted < 100 && attempt < 100000; ++attempt) {
            const std::size_t c = dim(eng), k = dim(eng);
            const double alpha = alpha_draw(eng);
            const double jitter = std::min(0.8, 3.0 / alpha);
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            std::uniform_real_distribution<double> scale(1.2, 2.0);
            Vec base(c);
            double bn = 0.0;
            do {
                for (double& v : base) v = unit(eng);
                bn = ocpl::l2_norm(base);
            } while (bn < 0.3);
            for (double& v : base) v /= bn;
            auto clustered = [&](std::span<double> v) {
                for (std::size_t j = 0; j < v.size(); ++j) {
                    v[j] = base[j] + jitter * unit(eng);
                }
                const double n = ocpl::l2_norm(v);
                const double s = scale(eng) / std::max(n, 1e-12);
                for (double& x : v) x *= s;
            };
            Mat w(k, c);
            for (std::size_t r = 0; r < k; ++r) clustered(w.row(r));
            Vec f(c);
            clustered(f);
            const std::size_t label = accepted % k;

            Vec logits(k);
            for (std::size_t r = 0; r < k; ++r) {
                double dot = 0.0, nw = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    dot += f[j] * w(r, j);
                    nw += w(r, j) * w(r, j);
                }
                logits[r] = kind == ocpl::ClassifierKind::Cosine
                                ? alpha * dot / (ocpl::l2_norm(f) * std::sqrt(nw))
                                : dot;
            }
            const Vec post = oracle::softmax(logits);
            const double lo = *std::min_element(post.begin(), post.end());
            const double hi = *std::max_element(post.begin(), post.end());
            if (lo < 1e-3 || 1.0 - hi < 1e-3) continue;
            ++accepted;

            const auto res = ocpl::classifier_ce_loss(f, label, w, alpha, kind);
            auto value = [&] {
                return ocpl::classifier_ce_loss(f, label, w, alpha, kind).value;
            };
            for (std::size_t i = 0; i < c; ++i) {
                const double fd = oracle::central_diff(value, f[i], 1e-5);
                if (std::abs(fd) < 1e-3 && std::abs(res.grad.wrt_feature[i]) < 1e-3) {
                    continue;
                }
                worst = std::max(worst, oracle::rel_err(fd, res.grad.wrt_feature[i]));
            }
            for (std::size_t r = 0; r < k; ++r) {
                for (std::size_t j = 0; j < c; ++j) {
                    const double fd = oracle::central_diff(value, w(r, j), 1e-5);
                    if (std::abs(fd) < 1e-3 &&
                        std::abs(res.grad.wrt_classifier_weights(r, j)) < 1e-3) {
                        continue;
                    }
                    worst = std::max(
                        worst, oracle::rel_err(fd, res.grad.wrt_classifier_weights(r, j)));
                }
            }
        }
        REQUIRE(accepted == 100);
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("randomized gradient sweeps pass for every loss op") {
    for (const char* op : {"dce_loss", "osr_loss", "cosine_ce_loss"}) {
        const auto report = ocpl::gradcheck(op, 100, 1e-5, 1e-4, 7);
        INFO(op << " worst group " << report.worst_group << " rel "
                << report.max_rel_error);
        CHECK(report.pass);
        CHECK(report.trials == 100);
        CHECK(report.max_rel_error < 1e-4);
    }
    CHECK_THROWS_AS((void)ocpl::gradcheck("nope", 1, 1e-5, 1e-4, 0),
                    std::invalid_argument);
}

TEST_CASE("prototype set validation") {
    PrototypeSet bad = make_protos(3, 2, ocpl::ProtoMode::FixedFinetuned);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    PrototypeSet neg = make_protos(2, 2, ocpl::ProtoMode::Learnable);
    neg.radius = -0.5;
    CHECK_THROWS_AS(neg.validate(), std::invalid_argument);

    PrototypeSet ok = make_protos(2, 2, ocpl::ProtoMode::FixedFinetuned);
    ok.centers(0, 0) = 1.0;
    ok.centers(1, 1) = 1.0;
    CHECK_NOTHROW(ok.validate());
}
