#include <catch2/catch_amalgamated.hpp>

#include "itxml/explain.hpp"

using namespace itxml;
using namespace itxml::explain;

namespace {

forest::Forest small_forest(Rng& rng, int n_features, int n_trees, Matrix* data_out,
                            std::vector<int>* labels_out) {
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> row(n_features);
        for (double& v : row) v = 4.0 * rng.uniform01();
        // Label depends on the first two features only.
        y.push_back(row[0] + 0.5 * row[1] > 3.0 ? 1 : 0);
        x.push_back(row);
    }
    if (std::set<int>(y.begin(), y.end()).size() < 2) y[0] = 1 - y[0];
    forest::ForestConfig cfg;
    cfg.n_trees = n_trees;
    cfg.max_depth = 4;
    auto f = forest::fit_forest(x, y, cfg, 11);
    if (data_out) *data_out = x;
    if (labels_out) *labels_out = y;
    return f;
}

BlackBox class_prob(const forest::Forest& f, int class_index) {
    return [&f, class_index](const std::vector<double>& x) {
        return forest::predict_proba(f, x)[class_index];
    };
}

std::vector<int> all_features(int m) {
    std::vector<int> out(m);
    for (int j = 0; j < m; ++j) out[j] = j;
    return out;
}

}  // namespace

TEST_CASE("tree SHAP matches coalition enumeration", "[oracle]") {
    Rng rng(918);
    for (int trial = 0; trial < 5; ++trial) {
        Matrix data;
        auto f = small_forest(rng, 4, 8, &data, nullptr);
        Matrix background(data.begin(), data.begin() + 6);
        for (int probe = 0; probe < 4; ++probe) {
            const auto& x = data[10 + probe];
            auto fast = shap_values(f, x, background);
            for (std::size_t cls = 0; cls < f.class_values.size(); ++cls) {
                auto slow = brute_force_shapley(class_prob(f, static_cast<int>(cls)), x, background,
                                                all_features(4));
                for (int j = 0; j < 4; ++j)
                    CHECK(fast.values[cls][j] == Catch::Approx(slow[j]).margin(1e-10));
            }
        }
    }
}

TEST_CASE("SHAP local accuracy: base + sum(phi) = prediction", "[property]") {
    Rng rng(404);
    Matrix data;
    auto f = small_forest(rng, 5, 20, &data, nullptr);
    Matrix background(data.begin(), data.begin() + 10);
    for (int probe = 0; probe < 10; ++probe) {
        const auto& x = data[20 + probe];
        auto exp = shap_values(f, x, background);
        auto p = forest::predict_proba(f, x);
        for (std::size_t cls = 0; cls < p.size(); ++cls) {
            double total = exp.base_values[cls];
            for (double v : exp.values[cls]) total += v;
            CHECK(total == Catch::Approx(p[cls]).margin(1e-10));
        }
    }
}

TEST_CASE("SHAP per-class attributions are equal and opposite for two classes") {
    Rng rng(77);
    Matrix data;
    auto f = small_forest(rng, 3, 10, &data, nullptr);
    Matrix background(data.begin(), data.begin() + 5);
    auto exp = shap_values(f, data[30], background);
    REQUIRE(exp.values.size() == 2);
    for (int j = 0; j < 3; ++j)
        CHECK(exp.values[0][j] == Catch::Approx(-exp.values[1][j]).margin(1e-12));
    CHECK(exp.base_values[0] + exp.base_values[1] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("features the trees never split on are null players") {
    Rng rng(55);
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
        double v = 4.0 * rng.uniform01();
        x.push_back({v, 9.0});  // constant second feature: never split
        y.push_back(v > 2.0 ? 1 : 0);
    }
    forest::ForestConfig cfg;
    cfg.n_trees = 10;
    auto f = forest::fit_forest(x, y, cfg, 3);
    Matrix background(x.begin(), x.begin() + 8);
    auto exp = shap_values(f, x[15], background);
    for (const auto& row : exp.values) CHECK(row[1] == 0.0);
}

TEST_CASE("explaining a background point against itself gives all-zero phi") {
    Rng rng(66);
    Matrix data;
    auto f = small_forest(rng, 3, 10, &data, nullptr);
    Matrix background = {data[0]};
    auto exp = shap_values(f, data[0], background);
    for (const auto& row : exp.values)
        for (double v : row) CHECK(v == 0.0);
    auto p = forest::predict_proba(f, data[0]);
    CHECK(exp.base_values[0] == Catch::Approx(p[0]).margin(1e-12));
}

TEST_CASE("brute_force_shapley on a hand-solvable additive model", "[oracle]") {
    // f(x) = 2 x0 + 3 x1. Interventional Shapley of an additive model is
    // phi_j = coef_j * (x_j - mean_b b_j) regardless of interactions.
    BlackBox f = [](const std::vector<double>& x) { return 2.0 * x[0] + 3.0 * x[1]; };
    Matrix background = {{0.0, 0.0}, {1.0, 2.0}};
    std::vector<double> x = {2.0, 1.0};
    auto phi = brute_force_shapley(f, x, background, {0, 1});
    CHECK(phi[0] == Catch::Approx(2.0 * (2.0 - 0.5)).margin(1e-12));
    CHECK(phi[1] == Catch::Approx(3.0 * (1.0 - 1.0)).margin(1e-12));
}

TEST_CASE("brute_force_shapley rejects empty background and too many features") {
    BlackBox f = [](const std::vector<double>&) { return 0.0; };
    CHECK_THROWS_AS(brute_force_shapley(f, {0.0}, {}, {0}), Error);
    CHECK_THROWS_AS(brute_force_shapley(f, std::vector<double>(16, 0.0),
                                        {std::vector<double>(16, 0.0)}, all_features(16)),
                    Error);
}

TEST_CASE("global importance ranks the decisive feature first") {
    Rng rng(21);
    Matrix data;
    auto f = small_forest(rng, 4, 25, &data, nullptr);
    Matrix background(data.begin(), data.begin() + 10);
    auto gi = global_shap_importance(f, data, background, 1);
    REQUIRE(gi.mean_abs_shap.size() == 4);
    CHECK(gi.ranking[0] == 0);  // labels were built from feature 0 primarily
    for (double v : gi.mean_abs_shap) CHECK(v >= 0.0);
    CHECK_THROWS_AS(global_shap_importance(f, {}, background, 1), Error);
}

TEST_CASE("importance_correlation is pearson") {
    CHECK(importance_correlation({1, 2, 3}, {2, 4, 6}) == Catch::Approx(1.0));
    CHECK(importance_correlation({1, 2, 3}, {3, 2, 1}) == Catch::Approx(-1.0));
}

TEST_CASE("shap_correlation_matrix structure") {
    Matrix rows = {{1.0, 2.0, 0.5}, {2.0, 4.0, 0.5}, {3.0, 6.0, 0.5}, {4.0, 8.0, 0.5}};
    auto c = shap_correlation_matrix(rows, {0, 1, 2});
    CHECK(c[0][0] == 1.0);
    CHECK(c[0][1] == Catch::Approx(1.0));
    CHECK(c[1][0] == c[0][1]);
    CHECK(is_absent(c[0][2]));  // zero-variance column
    CHECK(is_absent(c[2][1]));
    CHECK_THROWS_AS(shap_correlation_matrix({rows[0], rows[1]}, {0, 1}), Error);
}

TEST_CASE("training_stats skips absent values") {
    Matrix x = {{1.0, kAbsent}, {3.0, 4.0}, {5.0, 6.0}};
    auto s = training_stats(x);
    CHECK(s.means[0] == Catch::Approx(3.0));
    CHECK(s.means[1] == Catch::Approx(5.0));
    CHECK(s.stds[0] == Catch::Approx(2.0));
}

TEST_CASE("lime recovers the coefficients of a linear model", "[oracle]") {
    // For model f(x) = 4 x0 - 2 x1 + 1 and unit training stds, the surrogate
    // on standardized offsets must find beta = (4, -2) and intercept f(x).
    BlackBox f = [](const std::vector<double>& x) { return 4.0 * x[0] - 2.0 * x[1] + 1.0; };
    TrainingStats s;
    s.means = {0.0, 0.0};
    s.stds = {1.0, 1.0};
    std::vector<double> x = {0.5, -0.25};
    auto exp = lime_explain(f, x, s, 500, 0.0, 2, 1e-6, 42);
    REQUIRE(exp.weights.size() == 2);
    std::map<int, double> coef(exp.weights.begin(), exp.weights.end());
    CHECK(coef.at(0) == Catch::Approx(4.0).margin(1e-3));
    CHECK(coef.at(1) == Catch::Approx(-2.0).margin(1e-3));
    CHECK(exp.intercept == Catch::Approx(f(x)).margin(1e-3));
    CHECK(exp.fidelity == Catch::Approx(1.0).margin(1e-6));
    CHECK(exp.kernel_width == Catch::Approx(0.75 * std::sqrt(2.0)));
}

TEST_CASE("lime scales coefficients by the training stds") {
    // With std 2 on feature 0 a unit standardized step moves the model by
    // 2 * slope, so the reported coefficient doubles.
    BlackBox f = [](const std::vector<double>& x) { return 3.0 * x[0]; };
    TrainingStats s;
    s.means = {0.0};
    s.stds = {2.0};
    auto exp = lime_explain(f, {1.0}, s, 400, 0.0, 1, 1e-6, 9);
    REQUIRE(exp.weights.size() == 1);
    CHECK(exp.weights[0].second == Catch::Approx(6.0).margin(1e-3));
}

TEST_CASE("lime on a constant model reports zero fidelity and the constant") {
    BlackBox f = [](const std::vector<double>&) { return 0.42; };
    TrainingStats s;
    s.means = {0.0, 0.0};
    s.stds = {1.0, 1.0};
    auto exp = lime_explain(f, {1.0, 1.0}, s, 200, 0.0, 2, 1e-4, 1);
    CHECK(exp.intercept == Catch::Approx(0.42));
    CHECK(exp.fidelity == 0.0);
    CHECK(exp.weights.empty());
}

TEST_CASE("lime is deterministic in the seed and validates n_samples") {
    BlackBox f = [](const std::vector<double>& x) { return x[0] * x[0] + x[1]; };
    TrainingStats s;
    s.means = {0.0, 0.0};
    s.stds = {1.0, 1.0};
    auto a = lime_explain(f, {0.3, 0.7}, s, 300, 0.0, 2, 1e-3, 123);
    auto b = lime_explain(f, {0.3, 0.7}, s, 300, 0.0, 2, 1e-3, 123);
    CHECK(a.weights == b.weights);
    CHECK(a.intercept == b.intercept);
    CHECK(a.fidelity == b.fidelity);
    CHECK_THROWS_AS(lime_explain(f, {0.3, 0.7}, s, 10, 0.0, 2, 1e-3, 1), Error);
}

TEST_CASE("lime fidelity lies in [0, 1]", "[property]") {
    Rng rng(314);
    TrainingStats s;
    s.means = {0.0, 0.0, 0.0};
    s.stds = {1.0, 1.0, 1.0};
    BlackBox f = [](const std::vector<double>& x) {
        return std::sin(3.0 * x[0]) + x[1] * x[2];
    };
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x = {rng.normal(), rng.normal(), rng.normal()};
        auto exp = lime_explain(f, x, s, 200, 0.0, 3, 1e-3, rng.next_u64());
        CHECK(exp.fidelity >= 0.0);
        CHECK(exp.fidelity <= 1.0);
    }
}
