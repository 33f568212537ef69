#pragma once

// Random forest: CART trees with Gini impurity, bootstrap sampling, sqrt
// feature subsampling, balanced class weights, plus the evaluation metrics
// (confusion matrix, precision/recall/F1, Cohen's kappa, MDI importance) and
// stratified cross-validation.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "itxml/core.hpp"

namespace itxml::forest {

struct TreeNode {
    int feature = -1;              // -1 marks a leaf
    double threshold = 0.0;        // x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    std::vector<double> leaf_totals;  // per-class weight mass (leaves only)
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
};

struct ForestConfig {
    int n_trees = 100;
    int max_depth = 10;
    int min_samples_leaf = 1;
    bool balanced_class_weights = true;
};

struct Forest {
    ForestConfig config;
    std::uint64_t seed = 0;
    int n_features = 0;
    std::vector<int> class_values;      // observed class ids, ascending
    std::vector<double> class_weights;  // aligned with class_values
    std::vector<double> feature_medians;  // training medians for imputation
    std::vector<Tree> trees;
    std::vector<std::vector<int>> oob_indices;  // per tree, rows not in its bootstrap
    std::vector<double> raw_importance;  // per-feature impurity decrease, summed over trees
};

namespace detail {

inline double weighted_gini(const std::vector<double>& class_mass, double total) {
    if (total <= 0.0) return 0.0;
    double s = 0.0;
    for (double m : class_mass) {
        double p = m / total;
        s += p * p;
    }
    return 1.0 - s;
}

struct TreeBuilder {
    const Matrix& x;
    const std::vector<int>& y;  // class indices 0..C-1
    const std::vector<double>& weights;  // per class
    const ForestConfig& cfg;
    int n_classes;
    int n_candidates;
    Rng rng;
    Tree tree;
    std::vector<double> importance;  // weighted impurity decrease per feature
    double root_mass = 0.0;

    int build(std::vector<int> rows, int depth) {
        std::vector<double> mass(n_classes, 0.0);
        double total = 0.0;
        for (int r : rows) {
            mass[y[r]] += weights[y[r]];
            total += weights[y[r]];
        }
        if (depth == 0) root_mass = total;
        const double node_gini = weighted_gini(mass, total);

        auto make_leaf = [&] {
            TreeNode leaf;
            leaf.leaf_totals = mass;
            tree.nodes.push_back(leaf);
            return static_cast<int>(tree.nodes.size()) - 1;
        };

        if (depth >= cfg.max_depth || node_gini == 0.0 ||
            static_cast<int>(rows.size()) < 2 * cfg.min_samples_leaf || rows.size() < 2)
            return make_leaf();

        // Candidate features: n_candidates drawn without replacement, then
        // scanned in ascending index order so gain ties resolve to the
        // lowest feature index.
        const int m = static_cast<int>(x[0].size());
        std::vector<int> all_feats(m);
        for (int f = 0; f < m; ++f) all_feats[f] = f;
        for (int i = 0; i < n_candidates; ++i)
            std::swap(all_feats[i], all_feats[i + rng.below(m - i)]);
        std::vector<int> feats(all_feats.begin(), all_feats.begin() + n_candidates);
        std::sort(feats.begin(), feats.end());

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = std::numeric_limits<double>::infinity();

        std::vector<std::pair<double, int>> vals;
        for (int f : feats) {
            vals.clear();
            for (int r : rows) vals.emplace_back(x[r][f], y[r]);
            std::sort(vals.begin(), vals.end());
            if (vals.front().first == vals.back().first) continue;

            std::vector<double> left_mass(n_classes, 0.0);
            double left_total = 0.0;
            std::vector<double> right_mass = mass;
            double right_total = total;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                double w = weights[vals[i].second];
                left_mass[vals[i].second] += w;
                left_total += w;
                right_mass[vals[i].second] -= w;
                right_total -= w;
                if (vals[i].first == vals[i + 1].first) continue;
                if (static_cast<int>(i) + 1 < cfg.min_samples_leaf ||
                    static_cast<int>(vals.size() - i - 1) < cfg.min_samples_leaf)
                    continue;
                double child =
                    left_total * weighted_gini(left_mass, left_total) +
                    right_total * weighted_gini(right_mass, right_total);
                // Strict '<' with features in ascending order and thresholds
                // scanned ascending keeps the tie rule deterministic.
                if (child < best_impurity - 1e-15) {
                    best_impurity = child;
                    best_feature = f;
                    best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
                }
            }
        }

        if (best_feature < 0 || best_impurity >= total * node_gini - 1e-15) return make_leaf();

        importance[best_feature] += (total * node_gini - best_impurity) / root_mass;

        std::vector<int> left_rows, right_rows;
        for (int r : rows)
            (x[r][best_feature] <= best_threshold ? left_rows : right_rows).push_back(r);

        TreeNode node;
        node.feature = best_feature;
        node.threshold = best_threshold;
        tree.nodes.push_back(node);
        int idx = static_cast<int>(tree.nodes.size()) - 1;
        int l = build(std::move(left_rows), depth + 1);
        int r = build(std::move(right_rows), depth + 1);
        tree.nodes[idx].left = l;
        tree.nodes[idx].right = r;
        return idx;
    }
};

inline const TreeNode& leaf_for(const Tree& tree, const std::vector<double>& x) {
    int idx = 0;
    while (tree.nodes[idx].feature >= 0) {
        const TreeNode& n = tree.nodes[idx];
        idx = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return tree.nodes[idx];
}

}  // namespace detail

// Balanced weights: n / (n_classes * count_k) per observed class.
inline std::vector<double> balanced_weights(const std::vector<int>& class_counts) {
    double n = 0.0;
    for (int c : class_counts) n += c;
    std::vector<double> out(class_counts.size());
    for (std::size_t k = 0; k < class_counts.size(); ++k)
        out[k] = n / (static_cast<double>(class_counts.size()) * class_counts[k]);
    return out;
}

inline std::vector<double> impute_row(const Forest& f, std::vector<double> x) {
    for (std::size_t j = 0; j < x.size(); ++j)
        if (is_absent(x[j])) x[j] = f.feature_medians[j];
    return x;
}

// Fits the forest. Absent values are imputed with per-feature training
// medians; per-tree seeds derive from the master seed by index so adding
// trees does not reshuffle earlier ones.
inline Forest fit_forest(const Matrix& x, const std::vector<int>& y, const ForestConfig& cfg,
                         std::uint64_t seed) {
    const int n = static_cast<int>(x.size());
    if (n < 2) throw data_error("EmptyData", "need at least 2 training rows");
    if (static_cast<int>(y.size()) != n) throw data_error("LengthMismatch", "x/y row counts differ");

    Forest f;
    f.config = cfg;
    f.seed = seed;
    f.n_features = static_cast<int>(x[0].size());

    std::set<int> classes(y.begin(), y.end());
    if (classes.size() < 2) throw data_error("SingleClass", "training labels contain one class");
    f.class_values.assign(classes.begin(), classes.end());
    std::map<int, int> class_index;
    for (std::size_t k = 0; k < f.class_values.size(); ++k) class_index[f.class_values[k]] = k;

    std::vector<int> yi(n);
    std::vector<int> counts(f.class_values.size(), 0);
    for (int i = 0; i < n; ++i) {
        yi[i] = class_index.at(y[i]);
        ++counts[yi[i]];
    }
    f.class_weights = cfg.balanced_class_weights
                          ? balanced_weights(counts)
                          : std::vector<double>(f.class_values.size(), 1.0);

    f.feature_medians.resize(f.n_features);
    for (int j = 0; j < f.n_features; ++j) {
        std::vector<double> col;
        for (int i = 0; i < n; ++i)
            if (!is_absent(x[i][j])) col.push_back(x[i][j]);
        f.feature_medians[j] = col.empty() ? 0.0 : stats::quantile(col, 0.5);
    }
    Matrix xi = x;
    for (auto& row : xi)
        for (int j = 0; j < f.n_features; ++j)
            if (is_absent(row[j])) row[j] = f.feature_medians[j];

    const int n_candidates =
        std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(f.n_features)))));

    f.trees.reserve(cfg.n_trees);
    f.oob_indices.resize(cfg.n_trees);
    f.raw_importance.assign(f.n_features, 0.0);
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng tree_rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(t) + 0x51ed270b)));
        std::vector<int> rows(n);
        std::vector<char> in_bag(n, 0);
        for (int i = 0; i < n; ++i) {
            rows[i] = static_cast<int>(tree_rng.below(n));
            in_bag[rows[i]] = 1;
        }
        for (int i = 0; i < n; ++i)
            if (!in_bag[i]) f.oob_indices[t].push_back(i);

        detail::TreeBuilder builder{xi, yi, f.class_weights, cfg,
                                    static_cast<int>(f.class_values.size()), n_candidates,
                                    tree_rng, {}, std::vector<double>(f.n_features, 0.0), 0.0};
        builder.build(std::move(rows), 0);
        for (int j = 0; j < f.n_features; ++j) f.raw_importance[j] += builder.importance[j];
        f.trees.push_back(std::move(builder.tree));
    }
    return f;
}

// Per-class probabilities: mean of each tree's leaf class distribution.
inline std::vector<double> predict_proba(const Forest& f, const std::vector<double>& x_raw) {
    if (static_cast<int>(x_raw.size()) != f.n_features)
        throw data_error("DimensionMismatch", "instance has wrong feature count");
    auto x = impute_row(f, x_raw);
    std::vector<double> acc(f.class_values.size(), 0.0);
    for (const auto& tree : f.trees) {
        const auto& leaf = detail::leaf_for(tree, x);
        double total = 0.0;
        for (double m : leaf.leaf_totals) total += m;
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += leaf.leaf_totals[k] / total;
    }
    double s = 0.0;
    for (double& v : acc) {
        v /= static_cast<double>(f.trees.size());
        s += v;
    }
    for (double& v : acc) v /= s;
    return acc;
}

// Predicted class id; probability ties break toward the lower class index.
inline int predict(const Forest& f, const std::vector<double>& x) {
    auto p = predict_proba(f, x);
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
        if (p[k] > p[best]) best = k;
    return f.class_values[best];
}

// Mean-decrease-impurity importance, averaged over trees and normalized to
// sum 1. Returns all zeros for a forest whose trees never split.
inline std::vector<double> feature_importance(const Forest& f) {
    std::vector<double> out = f.raw_importance;
    double s = 0.0;
    for (double v : out) s += v;
    if (s > 0.0)
        for (double& v : out) v /= s;
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    std::vector<int> class_values;  // ascending; absent classes dropped
    std::vector<std::vector<int>> counts;  // rows actual, columns predicted
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int support = 0;
    bool undefined_precision = false;  // flagged when TP+FP == 0
};

struct MetricsReport {
    std::map<int, ClassMetrics> per_class;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double kappa = 0.0;
    int n = 0;
    // Present only when produced by cross_validate.
    double cv_mean = 0.0;
    double cv_std = 0.0;
    std::vector<double> cv_scores;
};

struct Evaluation {
    ConfusionMatrix confusion;
    MetricsReport metrics;
};

inline Evaluation evaluate(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size() || y_true.empty())
        throw data_error("LengthMismatch", "evaluate needs equal non-empty label vectors");

    std::set<int> classes(y_true.begin(), y_true.end());
    classes.insert(y_pred.begin(), y_pred.end());

    Evaluation out;
    out.confusion.class_values.assign(classes.begin(), classes.end());
    const int c = static_cast<int>(classes.size());
    std::map<int, int> idx;
    for (int k = 0; k < c; ++k) idx[out.confusion.class_values[k]] = k;
    out.confusion.counts.assign(c, std::vector<int>(c, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i)
        ++out.confusion.counts[idx.at(y_true[i])][idx.at(y_pred[i])];

    const double n = static_cast<double>(y_true.size());
    out.metrics.n = static_cast<int>(y_true.size());

    double correct = 0.0, expected = 0.0;
    double mp = 0.0, mr = 0.0, mf = 0.0;
    for (int k = 0; k < c; ++k) {
        double tp = out.confusion.counts[k][k];
        double row = 0.0, col = 0.0;
        for (int j = 0; j < c; ++j) {
            row += out.confusion.counts[k][j];
            col += out.confusion.counts[j][k];
        }
        correct += tp;
        expected += row * col / n;
        ClassMetrics m;
        m.support = static_cast<int>(row);
        if (col > 0.0) {
            m.precision = tp / col;
        } else {
            m.precision = 0.0;
            m.undefined_precision = true;
        }
        m.recall = row > 0.0 ? tp / row : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        mp += m.precision;
        mr += m.recall;
        mf += m.f1;
        out.metrics.per_class[out.confusion.class_values[k]] = m;
    }
    out.metrics.accuracy = correct / n;
    out.metrics.macro_precision = mp / c;
    out.metrics.macro_recall = mr / c;
    out.metrics.macro_f1 = mf / c;

    double pe = expected / n;
    out.metrics.kappa = pe >= 1.0 ? 1.0 : (out.metrics.accuracy - pe) / (1.0 - pe);
    return out;
}

struct CvResult {
    std::vector<double> fold_scores;
    double mean = 0.0;
    double stddev = 0.0;  // population std over folds
    std::vector<std::string> warnings;
};

// Stratified k-fold: per class, rows are shuffled with a seed-derived stream
// and dealt round-robin to folds. Fold forests use fold-derived seeds.
inline CvResult cross_validate(const Matrix& x, const std::vector<int>& y, int k,
                               const ForestConfig& cfg, std::uint64_t seed) {
    if (k < 2) throw data_error("BadFolds", "k must be >= 2");
    if (static_cast<int>(x.size()) < k) throw data_error("TooFewRows", "fewer rows than folds");

    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(static_cast<int>(i));

    CvResult out;
    Rng rng(seed);
    std::vector<std::vector<int>> folds(k);
    for (auto& [cls, rows] : by_class) {
        if (static_cast<int>(rows.size()) < k)
            out.warnings.push_back("class " + std::to_string(cls) + " has fewer rows than folds; " +
                                   "stratification degraded");
        Rng class_rng = rng.derive(static_cast<std::uint64_t>(cls));
        class_rng.shuffle(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) folds[i % k].push_back(rows[i]);
    }

    for (int fold = 0; fold < k; ++fold) {
        Matrix xtr;
        std::vector<int> ytr;
        for (int other = 0; other < k; ++other) {
            if (other == fold) continue;
            for (int r : folds[other]) {
                xtr.push_back(x[r]);
                ytr.push_back(y[r]);
            }
        }
        Forest f = fit_forest(xtr, ytr, cfg, mix64(seed ^ mix64(static_cast<std::uint64_t>(fold) + 77)));
        int correct = 0;
        for (int r : folds[fold])
            if (predict(f, x[r]) == y[r]) ++correct;
        out.fold_scores.push_back(folds[fold].empty()
                                      ? 0.0
                                      : static_cast<double>(correct) / folds[fold].size());
    }
    out.mean = stats::mean(out.fold_scores);
    double ss = 0.0;
    for (double s : out.fold_scores) ss += (s - out.mean) * (s - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(out.fold_scores.size()));
    return out;
}

}  // namespace itxml::forest
