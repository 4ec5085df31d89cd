#include "cemf/solver.hpp"

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

#include <catch2/catch_amalgamated.hpp>

using cemf::FactorModel;
using cemf::Hyperparams;
using cemf::InteractionMatrix;
using cemf::SppmiMatrix;
using Catch::Matchers::WithinAbs;

TEST_CASE("init_model is seed-deterministic") {
    Hyperparams hp;
    hp.d = 4;
    hp.seed = 17;
    auto a = cemf::init_model(5, 6, hp);
    auto b = cemf::init_model(5, 6, hp);
    CHECK(a.X == b.X);
    CHECK(a.Y == b.Y);

    hp.seed = 18;
    auto c = cemf::init_model(5, 6, hp);
    CHECK(a.X != c.X);

    hp.init_scale = 0.0;
    auto z = cemf::init_model(5, 6, hp);
    CHECK(z.X.isZero());
    CHECK(z.Y.isZero());

    CHECK_THROWS_AS(cemf::init_model(0, 6, hp), std::invalid_argument);
}

TEST_CASE("scalar user update") {
    // one item with y = 2, r = 1, alpha = 1 (c = 2), lambda = 0.5:
    // x = (2*4 + 0.5)^-1 * (2*2) = 4 / 8.5
    Hyperparams hp;
    hp.d = 1;
    hp.alpha = 1.0;
    hp.lambda = 0.5;
    InteractionMatrix train(1, 1, {{0, 0, 1.0}});
    cemf::Matrix y(1, 1);
    y(0, 0) = 2.0;
    auto x = cemf::solve_user(y, train.row(0), hp, cemf::factor_gram(y), 0);
    CHECK_THAT(x[0], WithinAbs(4.0 / 8.5, 1e-15));
    CHECK_THAT(x[0], WithinAbs(0.47059, 1e-5));
}

TEST_CASE("user with no interactions gets the zero vector") {
    Hyperparams hp;
    hp.d = 3;
    hp.lambda = 0.7;
    std::mt19937_64 rng(5);
    auto model = testgen::random_model(rng, 3, 2, 4);
    InteractionMatrix train(2, 4, {{1, 0, 2.0}});
    cemf::update_users(model, train, hp);
    CHECK(model.X.col(0).isZero());
    CHECK_FALSE(model.X.col(1).isZero());
}

TEST_CASE("scalar item update driven only by a neighbor") {
    // no users at all, one neighbor with s = ln 3 and y_j = 1, lambda = 0.1:
    // y_i = ln 3 / 1.1
    Hyperparams hp;
    hp.d = 1;
    hp.lambda = 0.1;
    InteractionMatrix train(0, 2, {});
    SppmiMatrix s(2, {{0, 1, std::log(3.0)}});
    cemf::Matrix x(1, 0);
    cemf::Matrix y(1, 2);
    y(0, 0) = 5.0;  // overwritten by the solve
    y(0, 1) = 1.0;
    auto yi = cemf::solve_item(x, y, train.col(0), &s, 0, hp, cemf::factor_gram(x));
    CHECK_THAT(yi[0], WithinAbs(std::log(3.0) / 1.1, 1e-15));
    CHECK_THAT(yi[0], WithinAbs(0.9987, 1e-4));
}

TEST_CASE("user sweep matches dense normal equations") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 10; ++t) {
        auto train = testgen::random_interactions(rng, 6, 5, 0.4);
        auto model = testgen::random_model(rng, 3, 6, 5);
        Hyperparams hp;
        hp.d = 3;
        hp.alpha = 7.0;
        hp.lambda = 0.3;
        cemf::update_users(model, train, hp);
        for (std::size_t u = 0; u < 6; ++u) {
            auto expected = oracle::dense_user_solve(model.Y, train, u, hp);
            CHECK((model.X.col(u) - expected).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("gauss-seidel item sweep matches a dense replay") {
    std::mt19937_64 rng(37);
    for (int t = 0; t < 10; ++t) {
        auto train = testgen::random_interactions(rng, 6, 5, 0.4);
        auto s = testgen::random_sppmi(rng, 5, 0.5);
        auto model = testgen::random_model(rng, 3, 6, 5);
        Hyperparams hp;
        hp.d = 3;
        hp.alpha = 4.0;
        hp.lambda = 0.2;

        FactorModel replay = model;
        cemf::update_items(model, train, &s, hp);
        for (std::size_t i = 0; i < 5; ++i)
            replay.Y.col(i) = oracle::dense_item_solve(replay.X, replay.Y, train, &s, i, hp);
        CHECK((model.Y - replay.Y).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("empty SPPMI degenerates the item update to WMF") {
    std::mt19937_64 rng(41);
    auto train = testgen::random_interactions(rng, 6, 5, 0.5);
    auto model = testgen::random_model(rng, 3, 6, 5);
    Hyperparams hp;
    hp.d = 3;
    FactorModel with_empty = model, with_null = model;
    SppmiMatrix empty(5, {});
    cemf::update_items(with_empty, train, &empty, hp);
    cemf::update_items(with_null, train, nullptr, hp);
    CHECK(with_empty.Y == with_null.Y);
}

TEST_CASE("neighbor terms behave as a doubled symmetric matrix") {
    // summing the stored triangle with symmetric lookup must equal an explicit
    // loop over a dense symmetric S with both triangles filled
    std::mt19937_64 rng(83);
    auto train = testgen::random_interactions(rng, 5, 6, 0.4);
    auto s = testgen::random_sppmi(rng, 6, 0.6);
    auto model = testgen::random_model(rng, 3, 5, 6);
    Hyperparams hp;
    hp.d = 3;
    hp.alpha = 3.0;
    hp.lambda = 0.5;

    cemf::Matrix dense_s = cemf::Matrix::Zero(6, 6);
    s.for_each_pair([&](std::uint32_t i, std::uint32_t j, double v) {
        dense_s(i, j) = v;
        dense_s(j, i) = v;
    });

    const cemf::Matrix xxt = cemf::factor_gram(model.X);
    for (std::size_t i = 0; i < 6; ++i) {
        cemf::Matrix a = xxt;
        cemf::Vector b = cemf::Vector::Zero(3);
        auto col = train.col(i);
        for (std::size_t e = 0; e < col.size(); ++e) {
            double c = cemf::confidence(col.counts[e], hp.alpha);
            auto x = model.X.col(col.users[e]);
            a += (c - 1.0) * x * x.transpose();
            b += c * x;
        }
        for (std::size_t j = 0; j < 6; ++j) {
            if (j == i || dense_s(i, j) <= 0.0) continue;
            a += model.Y.col(j) * model.Y.col(j).transpose();
            b += dense_s(i, j) * model.Y.col(j);
        }
        a.diagonal().array() += hp.lambda;
        cemf::Vector expected = a.colPivHouseholderQr().solve(b);
        cemf::Vector got = cemf::solve_item(model.X, model.Y, train.col(i), &s, i, hp, xxt);
        CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("jacobi sweep solves every item against the stale Y") {
    std::mt19937_64 rng(43);
    auto train = testgen::random_interactions(rng, 6, 5, 0.4);
    auto s = testgen::random_sppmi(rng, 5, 0.6);
    auto model = testgen::random_model(rng, 3, 6, 5);
    Hyperparams hp;
    hp.d = 3;
    hp.alpha = 2.0;
    hp.lambda = 0.4;

    FactorModel stale = model;
    cemf::update_items(model, train, &s, hp, cemf::ItemSweep::jacobi, 3);
    for (std::size_t i = 0; i < 5; ++i) {
        auto expected = oracle::dense_item_solve(stale.X, stale.Y, train, &s, i, hp);
        CHECK((model.Y.col(i) - expected).cwiseAbs().maxCoeff() < 1e-10);
    }

    // thread count must not change the result
    FactorModel again = stale;
    cemf::update_items(again, train, &s, hp, cemf::ItemSweep::jacobi, 1);
    CHECK(again.Y == model.Y);
}

TEST_CASE("loss at the zero model") {
    Hyperparams hp;
    hp.d = 2;
    hp.alpha = 3.0;
    hp.lambda = 0.9;
    hp.init_scale = 0.0;
    InteractionMatrix train(2, 3, {{0, 0, 1.0}, {0, 2, 1.0}, {1, 1, 1.0}});
    SppmiMatrix s(3, {{0, 1, 0.5}, {1, 2, 1.5}});
    auto model = cemf::init_model(2, 3, hp);
    auto l = cemf::loss(model, train, &s, hp);
    CHECK_THAT(l.interaction_term, WithinAbs(3.0 * (1.0 + 3.0), 1e-12));
    CHECK_THAT(l.embedding_term, WithinAbs(0.25 + 2.25, 1e-12));
    CHECK_THAT(l.regularization_term, WithinAbs(0.0, 1e-15));
    CHECK_THAT(l.total, WithinAbs(12.0 + 2.5, 1e-12));
}

TEST_CASE("sparse loss equals the dense evaluation") {
    std::mt19937_64 rng(47);
    for (int t = 0; t < 20; ++t) {
        std::uniform_int_distribution<std::size_t> users(1, 20), items(2, 20);
        auto n = users(rng), m = items(rng);
        auto train = testgen::random_interactions(rng, n, m, 0.3);
        auto s = testgen::random_sppmi(rng, m, 0.3);
        auto model = testgen::random_model(rng, 1 + t % 4, n, m);
        Hyperparams hp;
        hp.d = 1 + t % 4;
        hp.alpha = 10.0;
        hp.lambda = 0.05;
        auto sparse = cemf::loss(model, train, &s, hp, 1 + t % 3);
        auto dense = oracle::dense_loss(model, train, &s, hp);
        CHECK_THAT(sparse.interaction_term, WithinAbs(dense.interaction, 1e-9));
        CHECK_THAT(sparse.embedding_term, WithinAbs(dense.embedding, 1e-9));
        CHECK_THAT(sparse.regularization_term, WithinAbs(dense.regularization, 1e-9));
        CHECK_THAT(sparse.total, WithinAbs(dense.total, 1e-9));
    }
}

TEST_CASE("a rank-d instance is fitted to zero loss") {
    // p is exactly rank 3 (block structure), alpha = 0, lambda = 0: the global
    // minimum of the objective is 0 and ALS reaches it
    std::vector<cemf::Entry> entries;
    for (std::uint32_t u = 0; u < 12; ++u)
        for (std::uint32_t i = 0; i < 12; ++i)
            if (u / 4 == i / 4) entries.push_back({u, i, 1.0});
    InteractionMatrix train(12, 12, std::move(entries));
    cemf::TrainConfig cfg;
    cfg.mode = cemf::TrainMode::wmf;
    cfg.hp.d = 3;
    cfg.hp.alpha = 0.0;
    cfg.hp.lambda = 0.0;
    cfg.hp.n_iterations = 200;
    cfg.hp.seed = 2;
    auto res = cemf::fit(train, nullptr, cfg);
    CHECK(res.trace.back().total < 1e-8);
}

TEST_CASE("loss trace is monotone non-increasing") {
    std::mt19937_64 rng(53);
    for (int t = 0; t < 20; ++t) {
        std::uniform_int_distribution<std::size_t> users(2, 12), items(2, 10);
        auto n = users(rng), m = items(rng);
        auto train = testgen::random_interactions(rng, n, m, 0.35);
        auto s = testgen::random_sppmi(rng, m, 0.4);
        cemf::TrainConfig cfg;
        cfg.mode = cemf::TrainMode::cemf;
        cfg.hp.d = 1 + t % 4;
        cfg.hp.alpha = (t % 2) ? 40.0 : 5.0;
        cfg.hp.lambda = 0.05;
        cfg.hp.n_iterations = 15;
        cfg.hp.seed = 1000 + t;
        auto res = cemf::fit(train, &s, cfg);
        REQUIRE(res.trace.size() == 15);
        for (std::size_t i = 1; i < res.trace.size(); ++i)
            CHECK(res.trace[i].total <= res.trace[i - 1].total + 1e-10);
    }
}

TEST_CASE("cemf with an empty SPPMI matrix follows the wmf trajectory") {
    std::mt19937_64 rng(59);
    auto train = testgen::random_interactions(rng, 8, 6, 0.4);
    SppmiMatrix empty(6, {});
    Hyperparams hp;
    hp.d = 3;
    hp.alpha = 12.0;
    hp.lambda = 0.1;
    hp.seed = 9;

    auto wmf = cemf::init_model(8, 6, hp);
    auto cemf_model = cemf::init_model(8, 6, hp);
    CHECK(wmf.X == cemf_model.X);
    for (int sweep = 0; sweep < 6; ++sweep) {
        cemf::update_users(wmf, train, hp);
        cemf::update_items(wmf, train, nullptr, hp);
        cemf::update_users(cemf_model, train, hp);
        cemf::update_items(cemf_model, train, &empty, hp);
        CHECK((wmf.X - cemf_model.X).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((wmf.Y - cemf_model.Y).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("coordinate updates zero the objective gradient") {
    std::mt19937_64 rng(61);
    for (int t = 0; t < 6; ++t) {
        std::uniform_int_distribution<std::size_t> users(2, 10), items(2, 10);
        auto n = users(rng), m = items(rng);
        auto train = testgen::random_interactions(rng, n, m, 0.4);
        auto s = testgen::random_sppmi(rng, m, 0.4);
        Hyperparams hp;
        hp.d = 1 + t % 4;
        hp.alpha = 6.0;
        hp.lambda = 0.2;
        auto model = testgen::random_model(rng, hp.d, n, m);

        cemf::update_users(model, train, hp);
        for (std::size_t u = 0; u < n; ++u) {
            auto grad = oracle::fd_grad_user(model, train, &s, hp, u, 1e-5);
            CHECK(grad.norm() < 1e-6);
        }

        // check each item right after its own solve, before later items move
        const cemf::Matrix xxt = cemf::factor_gram(model.X);
        for (std::size_t i = 0; i < m; ++i) {
            model.Y.col(i) = cemf::solve_item(model.X, model.Y, train.col(i), &s, i, hp, xxt);
            auto grad = oracle::fd_grad_item(model, train, &s, hp, i, 1e-5);
            CHECK(grad.norm() < 1e-6);
        }
    }
}

TEST_CASE("lambda = 0 with a degenerate Y raises a solver error naming the user") {
    InteractionMatrix train(2, 2, {{0, 0, 1.0}});
    cemf::TrainConfig cfg;
    cfg.mode = cemf::TrainMode::wmf;
    cfg.hp.d = 2;
    cfg.hp.lambda = 0.0;
    cfg.hp.init_scale = 0.0;  // Y = 0 makes the user system singular
    try {
        cemf::fit(train, nullptr, cfg);
        FAIL("expected SolverError");
    } catch (const cemf::SolverError& e) {
        CHECK(std::string(e.what()).find("user 0") != std::string::npos);
    }
}

TEST_CASE("early stopping respects the relative tolerance") {
    std::mt19937_64 rng(67);
    auto train = testgen::random_interactions(rng, 8, 6, 0.5);
    cemf::TrainConfig cfg;
    cfg.mode = cemf::TrainMode::wmf;
    cfg.hp.d = 2;
    cfg.hp.n_iterations = 30;
    cfg.rel_tolerance = 1e9;  // any decrease is below this
    auto res = cemf::fit(train, nullptr, cfg);
    CHECK(res.trace.size() == 2);

    cfg.rel_tolerance.reset();
    auto full = cemf::fit(train, nullptr, cfg);
    CHECK(full.trace.size() == 30);
}

TEST_CASE("fit validates its inputs") {
    std::mt19937_64 rng(71);
    auto train = testgen::random_interactions(rng, 4, 4, 0.5);
    cemf::TrainConfig cfg;
    cfg.mode = cemf::TrainMode::cemf;
    CHECK_THROWS_AS(cemf::fit(train, nullptr, cfg), std::invalid_argument);

    SppmiMatrix wrong_dim(7, {});
    CHECK_THROWS_AS(cemf::fit(train, &wrong_dim, cfg), std::invalid_argument);

    // wmf ignores a supplied matrix
    cfg.mode = cemf::TrainMode::wmf;
    auto s = testgen::random_sppmi(rng, 4, 0.9);
    auto with_s = cemf::fit(train, &s, cfg);
    auto without = cemf::fit(train, nullptr, cfg);
    CHECK(with_s.model.Y == without.model.Y);
}

TEST_CASE("user sweep is thread-count invariant") {
    std::mt19937_64 rng(73);
    auto train = testgen::random_interactions(rng, 30, 12, 0.2);
    Hyperparams hp;
    hp.d = 4;
    auto a = testgen::random_model(rng, 4, 30, 12);
    auto b = a;
    cemf::update_users(a, train, hp, 1);
    cemf::update_users(b, train, hp, 4);
    CHECK(a.X == b.X);

    auto la = cemf::loss(a, train, nullptr, hp, 1);
    auto lb = cemf::loss(b, train, nullptr, hp, 5);
    CHECK(la.total == lb.total);
}

TEST_CASE("model directory round-trips") {
    std::mt19937_64 rng(79);
    auto model = testgen::random_model(rng, 3, 5, 7);
    model.hp.d = 3;
    model.hp.alpha = 25.0;
    model.hp.seed = 123;
    std::vector<cemf::LossBreakdown> trace{{10.0, 2.0, 1.0, 13.0}, {8.0, 1.5, 1.0, 10.5}};
    testgen::TmpDir tmp("model_io");
    cemf::save_model(tmp.path, model, cemf::TrainMode::cemf, trace);
    auto loaded = cemf::load_model(tmp.path);
    CHECK(loaded.mode == cemf::TrainMode::cemf);
    CHECK(loaded.model.X == model.X);
    CHECK(loaded.model.Y == model.Y);
    CHECK(loaded.model.hp.alpha == 25.0);
    CHECK(loaded.model.hp.seed == 123);
    REQUIRE(loaded.trace.size() == 2);
    CHECK(loaded.trace[1].total == 10.5);
}
