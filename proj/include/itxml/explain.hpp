#pragma once

// Exact interventional Shapley attributions for the forest, a brute-force
// coalition oracle, global mean-|SHAP| importance, SHAP correlations, and
// LIME-style local linear surrogates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "itxml/core.hpp"
#include "itxml/forest.hpp"

namespace itxml::explain {

using BlackBox = std::function<double(const std::vector<double>&)>;

struct ShapExplanation {
    std::vector<double> base_values;          // per class: mean background prediction
    Matrix values;                            // [class][feature]
};

namespace detail {

// Shapley weight table for a d-player game: w[s] = s! (d-s-1)! / d!.
inline std::vector<double> shapley_weights(int d) {
    std::vector<double> w(d);
    w[0] = 1.0 / d;
    for (int s = 0; s + 1 < d; ++s) w[s + 1] = w[s] * (s + 1.0) / (d - s - 1.0);
    return w;
}

// sum_{t=0}^{free} C(free, t) * w[s0 + t]
inline double coalition_coef(int free, int s0, const std::vector<double>& w) {
    double c = 1.0;
    double acc = 0.0;
    for (int t = 0; t <= free; ++t) {
        acc += c * w[s0 + t];
        c = c * (free - t) / (t + 1.0);
    }
    return acc;
}

// Exact interventional Shapley contribution of one tree for one background
// row, accumulated into phi[class][feature].
//
// Players are the features where x and the background row b take different
// directions at some split. A leaf is reached by the hybrid point iff every
// player that forced the x-direction on its path is in the coalition and
// every player that forced the b-direction is out; the combinatorial factors
// then sum in closed form over the unconstrained players.
struct TreeShapWorker {
    const forest::Tree& tree;
    const std::vector<double>& x;
    const std::vector<double>& b;
    std::vector<int> player_index;  // feature -> dense player id, or -1
    int n_players = 0;
    std::vector<double> weights;    // shapley_weights(n_players)
    std::vector<int> path_in;       // player ids forced to the x side
    std::vector<int> path_out;      // player ids forced to the b side
    std::vector<signed char> constrained;  // per player: 0 free, +1 in, -1 out
    Matrix* phi;                    // [class][feature]
    const std::vector<int>* player_feature;  // player id -> feature

    void run() {
        if (n_players == 0) return;  // x and b agree on every decision: all phi zero
        weights = shapley_weights(n_players);
        constrained.assign(n_players, 0);
        walk(0);
    }

    void walk(int node_idx) {
        const forest::TreeNode& node = tree.nodes[node_idx];
        if (node.feature < 0) {
            emit(node);
            return;
        }
        const bool x_left = x[node.feature] <= node.threshold;
        const bool b_left = b[node.feature] <= node.threshold;
        if (x_left == b_left) {
            walk(x_left ? node.left : node.right);
            return;
        }
        const int pid = player_index[node.feature];
        if (constrained[pid] == +1) {
            walk(x_left ? node.left : node.right);
            return;
        }
        if (constrained[pid] == -1) {
            walk(b_left ? node.left : node.right);
            return;
        }
        constrained[pid] = +1;
        path_in.push_back(pid);
        walk(x_left ? node.left : node.right);
        path_in.pop_back();
        constrained[pid] = -1;
        path_out.push_back(pid);
        walk(b_left ? node.left : node.right);
        path_out.pop_back();
        constrained[pid] = 0;
    }

    void emit(const forest::TreeNode& leaf) {
        const int a = static_cast<int>(path_in.size());
        const int c = static_cast<int>(path_out.size());
        const int free = n_players - a - c;
        double total = 0.0;
        for (double m : leaf.leaf_totals) total += m;
        const double cin = a > 0 ? coalition_coef(free, a - 1, weights) : 0.0;
        const double cout = coalition_coef(free, a, weights);
        for (std::size_t cls = 0; cls < leaf.leaf_totals.size(); ++cls) {
            const double v = leaf.leaf_totals[cls] / total;
            if (v == 0.0) continue;
            for (int pid : path_in) (*phi)[cls][(*player_feature)[pid]] += v * cin;
            for (int pid : path_out) (*phi)[cls][(*player_feature)[pid]] -= v * cout;
        }
    }
};

}  // namespace detail

// Exact interventional SHAP values for every class probability output,
// averaged over the background rows. Features never creating a decision
// divergence in a tree are null players there and get zero from that tree.
inline ShapExplanation shap_values(const forest::Forest& f, const std::vector<double>& x_raw,
                                   const Matrix& background_raw) {
    if (background_raw.empty()) throw data_error("EmptyBackground", "background set is empty");
    const int n_classes = static_cast<int>(f.class_values.size());
    const auto x = forest::impute_row(f, x_raw);
    Matrix background;
    background.reserve(background_raw.size());
    for (const auto& row : background_raw) background.push_back(forest::impute_row(f, row));

    ShapExplanation out;
    out.base_values.assign(n_classes, 0.0);
    out.values.assign(n_classes, std::vector<double>(f.n_features, 0.0));

    const double scale = 1.0 / (static_cast<double>(f.trees.size()) * background.size());
    Matrix phi(n_classes, std::vector<double>(f.n_features, 0.0));

    for (const auto& tree : f.trees) {
        // Distinct split features of this tree, for the per-background player scan.
        std::vector<int> split_features;
        {
            std::set<int> s;
            for (const auto& node : tree.nodes)
                if (node.feature >= 0) s.insert(node.feature);
            split_features.assign(s.begin(), s.end());
        }
        for (const auto& b : background) {
            detail::TreeShapWorker worker{tree, x, b, {}, 0, {}, {}, {}, {}, &phi, nullptr};
            worker.player_index.assign(f.n_features, -1);
            std::vector<int> player_feature;
            for (int feat : split_features) {
                bool diverges = false;
                for (const auto& node : tree.nodes) {
                    if (node.feature != feat) continue;
                    if ((x[feat] <= node.threshold) != (b[feat] <= node.threshold)) {
                        diverges = true;
                        break;
                    }
                }
                if (diverges) {
                    worker.player_index[feat] = static_cast<int>(player_feature.size());
                    player_feature.push_back(feat);
                }
            }
            worker.n_players = static_cast<int>(player_feature.size());
            worker.player_feature = &player_feature;
            worker.run();

            const auto& leaf = forest::detail::leaf_for(tree, b);
            double total = 0.0;
            for (double m : leaf.leaf_totals) total += m;
            for (int cls = 0; cls < n_classes; ++cls)
                out.base_values[cls] += leaf.leaf_totals[cls] / total;
        }
    }
    for (int cls = 0; cls < n_classes; ++cls) {
        out.base_values[cls] *= scale;
        for (int j = 0; j < f.n_features; ++j) out.values[cls][j] = phi[cls][j] * scale;
    }
    return out;
}

// Exact Shapley values by full coalition enumeration with the interventional
// value function v(S) = mean_b f(x on S, b elsewhere). Oracle for shap_values.
inline std::vector<double> brute_force_shapley(const BlackBox& f, const std::vector<double>& x,
                                               const Matrix& background,
                                               const std::vector<int>& features) {
    if (background.empty()) throw data_error("EmptyBackground", "background set is empty");
    const int m = static_cast<int>(features.size());
    if (m > 15) throw data_error("TooManyFeatures", "coalition enumeration capped at 15 features");

    auto value = [&](std::uint32_t mask) {
        double acc = 0.0;
        for (const auto& b : background) {
            std::vector<double> hybrid = b;
            for (int j = 0; j < m; ++j)
                if (mask & (1u << j)) hybrid[features[j]] = x[features[j]];
            acc += f(hybrid);
        }
        return acc / static_cast<double>(background.size());
    };

    std::vector<double> v(1u << m);
    for (std::uint32_t mask = 0; mask < v.size(); ++mask) v[mask] = value(mask);

    std::vector<double> w = m > 0 ? detail::shapley_weights(m) : std::vector<double>{};
    std::vector<double> phi(m, 0.0);
    for (int j = 0; j < m; ++j) {
        for (std::uint32_t mask = 0; mask < v.size(); ++mask) {
            if (mask & (1u << j)) continue;
            int s = __builtin_popcount(mask);
            phi[j] += w[s] * (v[mask | (1u << j)] - v[mask]);
        }
    }
    return phi;
}

struct GlobalImportance {
    std::vector<double> mean_abs_shap;  // per feature
    std::vector<int> ranking;           // feature indices, descending importance
};

// Mean |SHAP| per feature over a dataset, for one class output (the positive
// class in two-class reporting).
inline GlobalImportance global_shap_importance(const forest::Forest& f, const Matrix& dataset,
                                               const Matrix& background, int class_index) {
    if (dataset.empty()) throw data_error("EmptyDataset", "no instances to explain");
    GlobalImportance out;
    out.mean_abs_shap.assign(f.n_features, 0.0);
    for (const auto& row : dataset) {
        auto exp = shap_values(f, row, background);
        for (int j = 0; j < f.n_features; ++j)
            out.mean_abs_shap[j] += std::fabs(exp.values[class_index][j]);
    }
    for (double& v : out.mean_abs_shap) v /= static_cast<double>(dataset.size());
    out.ranking.resize(f.n_features);
    for (int j = 0; j < f.n_features; ++j) out.ranking[j] = j;
    std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](int a, int b) {
        return out.mean_abs_shap[a] > out.mean_abs_shap[b];
    });
    return out;
}

// Pearson correlation between SHAP importance and RF importance vectors.
inline double importance_correlation(const std::vector<double>& shap_importance,
                                     const std::vector<double>& rf_importance) {
    return stats::pearson(shap_importance, rf_importance);
}

// Per-instance SHAP matrix [n x features] for one class output.
inline Matrix shap_matrix(const forest::Forest& f, const Matrix& dataset, const Matrix& background,
                          int class_index) {
    Matrix out;
    out.reserve(dataset.size());
    for (const auto& row : dataset)
        out.push_back(shap_values(f, row, background).values[class_index]);
    return out;
}

// Pearson matrix of SHAP values across instances for selected features;
// zero-variance pairs are flagged absent (NaN).
inline Matrix shap_correlation_matrix(const Matrix& shap_rows, const std::vector<int>& features) {
    if (shap_rows.size() < 3) throw data_error("EmptyDataset", "need at least 3 instances");
    const int m = static_cast<int>(features.size());
    Matrix cols(m);
    for (int j = 0; j < m; ++j)
        for (const auto& row : shap_rows) cols[j].push_back(row[features[j]]);
    Matrix out(m, std::vector<double>(m, kAbsent));
    for (int i = 0; i < m; ++i) {
        out[i][i] = 1.0;
        for (int j = i + 1; j < m; ++j) {
            try {
                out[i][j] = out[j][i] = stats::pearson(cols[i], cols[j]);
            } catch (const Error&) {
                // zero variance: left absent
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// LIME
// ---------------------------------------------------------------------------

struct LimeExplanation {
    std::vector<std::pair<int, double>> weights;  // top-k (feature, coefficient)
    double intercept = 0.0;
    double kernel_width = 0.0;
    int n_samples = 0;
    double fidelity = 0.0;  // weighted R^2 of the surrogate, clamped to [0,1]
};

struct TrainingStats {
    std::vector<double> means;
    std::vector<double> stds;  // zero-variance features get std 1 internally
};

inline TrainingStats training_stats(const Matrix& x) {
    if (x.empty()) throw data_error("EmptyDataset", "no rows for training stats");
    const int m = static_cast<int>(x[0].size());
    TrainingStats s;
    s.means.assign(m, 0.0);
    s.stds.assign(m, 0.0);
    for (int j = 0; j < m; ++j) {
        std::vector<double> col;
        for (const auto& row : x)
            if (!is_absent(row[j])) col.push_back(row[j]);
        s.means[j] = col.empty() ? 0.0 : stats::mean(col);
        s.stds[j] = col.size() > 1 ? stats::stddev(col) : 0.0;
    }
    return s;
}

// Weighted ridge surrogate on perturbations around x. Perturbations are
// standard-normal draws on standardized features mapped back through the
// training stds; the exponential kernel acts on standardized distance.
inline LimeExplanation lime_explain(const BlackBox& model, const std::vector<double>& x,
                                    const TrainingStats& stats_in, int n_samples,
                                    double kernel_width, int top_k, double ridge,
                                    std::uint64_t seed) {
    if (n_samples < 50) throw data_error("BadConfig", "lime needs n_samples >= 50");
    const int m = static_cast<int>(x.size());
    std::vector<double> stds = stats_in.stds;
    for (double& s : stds)
        if (s <= 0.0) s = 1.0;
    if (kernel_width <= 0.0) kernel_width = 0.75 * std::sqrt(static_cast<double>(m));

    Rng rng(seed);
    Matrix z(n_samples, std::vector<double>(m));  // standardized offsets from x
    std::vector<double> y(n_samples);
    std::vector<double> w(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        std::vector<double> pt = x;
        double d2 = 0.0;
        for (int j = 0; j < m; ++j) {
            double u = rng.normal();
            z[i][j] = u;
            pt[j] = x[j] + u * stds[j];
            d2 += u * u;
        }
        y[i] = model(pt);
        w[i] = std::exp(-d2 / (kernel_width * kernel_width));
    }

    // Degenerate model: constant output over the sample.
    const double y0 = y[0];
    bool constant = true;
    for (double v : y)
        if (std::fabs(v - y0) > 1e-12) {
            constant = false;
            break;
        }

    LimeExplanation out;
    out.kernel_width = kernel_width;
    out.n_samples = n_samples;
    if (constant) {
        out.intercept = y0;
        out.fidelity = 0.0;
        return out;
    }

    // Ridge normal equations on [1, z]; intercept unpenalized.
    const int p = m + 1;
    Matrix a(p, std::vector<double>(p, 0.0));
    std::vector<double> rhs(p, 0.0);
    for (int i = 0; i < n_samples; ++i) {
        std::vector<double> row(p);
        row[0] = 1.0;
        for (int j = 0; j < m; ++j) row[j + 1] = z[i][j];
        for (int r = 0; r < p; ++r) {
            rhs[r] += w[i] * row[r] * y[i];
            for (int c = 0; c < p; ++c) a[r][c] += w[i] * row[r] * row[c];
        }
    }
    for (int j = 1; j < p; ++j) a[j][j] += ridge;
    auto beta = solve_linear(std::move(a), std::move(rhs));

    // Weighted R^2 on the perturbation sample.
    double wsum = 0.0, ybar = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        wsum += w[i];
        ybar += w[i] * y[i];
    }
    ybar /= wsum;
    double ss_res = 0.0, ss_tot = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        double pred = beta[0];
        for (int j = 0; j < m; ++j) pred += beta[j + 1] * z[i][j];
        ss_res += w[i] * (y[i] - pred) * (y[i] - pred);
        ss_tot += w[i] * (y[i] - ybar) * (y[i] - ybar);
    }
    out.fidelity = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 0.0;
    out.intercept = beta[0];

    std::vector<int> order(m);
    for (int j = 0; j < m; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
        return std::fabs(beta[lhs + 1]) > std::fabs(beta[rhs + 1]);
    });
    for (int j = 0; j < std::min(top_k, m); ++j)
        out.weights.emplace_back(order[j], beta[order[j] + 1]);
    return out;
}

}  // namespace itxml::explain
