#pragma once

// Orchestration of the five assessment stages and report assembly.

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "itxml/core.hpp"
#include "itxml/dataset.hpp"
#include "itxml/explain.hpp"
#include "itxml/forest.hpp"
#include "itxml/hmm.hpp"
#include "itxml/json_io.hpp"
#include "itxml/survey.hpp"

namespace itxml::pipeline {

constexpr const char* kToolVersion = "1.0.0";

struct Config {
    // preprocess
    double test_fraction = 0.2;
    double drop_missing_frac = 0.5;
    // hmm
    int n_states = 3;
    double em_tol = 1e-6;
    int em_max_iter = 500;
    int restarts = 1;
    bool stacked = false;  // single concatenated stream instead of per-org sequences
    // forest
    int n_trees = 100;
    int max_depth = 10;
    int min_samples_leaf = 1;
    int cv_folds = 5;
    bool include_hmm_state_feature = true;
    // explain
    int background_cap = 100;
    int lime_samples = 1000;
    double lime_kernel_width = 0.0;  // 0 -> 0.75 * sqrt(M)
    double lime_ridge = 1.0;
    int top_k = 10;
    int corr_matrix_features = 5;
    bool run_lime = true;
};

// Flat "[section]" + "key = value" config file mirroring module names.
inline Config parse_config(std::istream& in) {
    Config cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = survey::detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (s.front() == '[' && s.back() == ']') {
            section = s.substr(1, s.size() - 2);
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw data_error("BadConfig", "line " + std::to_string(lineno) + ": expected key = value");
        std::string key = section + "." + survey::detail::trim(s.substr(0, eq));
        std::string val = survey::detail::trim(s.substr(eq + 1));
        auto as_bool = [&] { return val == "true" || val == "1" || val == "yes"; };
        if (key == "preprocess.test_fraction") cfg.test_fraction = std::stod(val);
        else if (key == "preprocess.drop_missing_frac") cfg.drop_missing_frac = std::stod(val);
        else if (key == "hmm_engine.n_states") cfg.n_states = std::stoi(val);
        else if (key == "hmm_engine.tol") cfg.em_tol = std::stod(val);
        else if (key == "hmm_engine.max_iter") cfg.em_max_iter = std::stoi(val);
        else if (key == "hmm_engine.restarts") cfg.restarts = std::stoi(val);
        else if (key == "hmm_engine.stacked") cfg.stacked = as_bool();
        else if (key == "forest.n_trees") cfg.n_trees = std::stoi(val);
        else if (key == "forest.max_depth") cfg.max_depth = std::stoi(val);
        else if (key == "forest.min_samples_leaf") cfg.min_samples_leaf = std::stoi(val);
        else if (key == "forest.cv_folds") cfg.cv_folds = std::stoi(val);
        else if (key == "forest.include_hmm_state_feature") cfg.include_hmm_state_feature = as_bool();
        else if (key == "explain.background_cap") cfg.background_cap = std::stoi(val);
        else if (key == "explain.lime_samples") cfg.lime_samples = std::stoi(val);
        else if (key == "explain.lime_kernel_width") cfg.lime_kernel_width = std::stod(val);
        else if (key == "explain.lime_ridge") cfg.lime_ridge = std::stod(val);
        else if (key == "explain.top_k") cfg.top_k = std::stoi(val);
        else if (key == "explain.corr_matrix_features") cfg.corr_matrix_features = std::stoi(val);
        else if (key == "explain.run_lime") cfg.run_lime = as_bool();
        else throw data_error("BadConfig", "unknown config key '" + key + "'");
    }
    return cfg;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("FileUnreadable", "cannot open config '" + path + "'");
    return parse_config(in);
}

// ---------------------------------------------------------------------------
// Stage 4 helpers
// ---------------------------------------------------------------------------

struct OrgSequences {
    std::vector<hmm::ObservationSequence> seqs;      // one per org, file order
    std::vector<std::vector<int>> dataset_rows;      // per org, ScoredDataset row indices
};

// Per-org observation sequences of composite dimension vectors, skipping
// respondents with any absent dimension.
inline OrgSequences build_sequences(const prep::ScoredDataset& ds) {
    OrgSequences out;
    std::map<std::string, std::size_t> org_pos;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& cs = ds.composites[i];
        bool complete = true;
        std::vector<double> vec;
        for (const auto& d : cs.dims) {
            if (!d) {
                complete = false;
                break;
            }
            vec.push_back(*d);
        }
        if (!complete) continue;
        auto it = org_pos.find(ds.org_index[i]);
        if (it == org_pos.end()) {
            it = org_pos.emplace(ds.org_index[i], out.seqs.size()).first;
            out.seqs.push_back({ds.org_index[i], {}});
            out.dataset_rows.emplace_back();
        }
        out.seqs[it->second].obs.push_back(std::move(vec));
        out.dataset_rows[it->second].push_back(static_cast<int>(i));
    }
    if (out.seqs.empty()) throw data_error("EmptyDataset", "no complete rows for HMM training");
    return out;
}

// Multi-restart Baum-Welch: restart 0 uses the plain quantile init, later
// restarts jitter the means; best final log-likelihood wins, ties to the
// lowest restart index.
inline hmm::FitResult fit_hmm(const std::vector<hmm::ObservationSequence>& seqs, const Config& cfg,
                              std::uint64_t seed) {
    std::optional<hmm::FitResult> best;
    for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
        hmm::HmmParams init;
        if (r == 0) {
            init = hmm::init_params(seqs, cfg.n_states);
        } else {
            Rng jitter(mix64(seed ^ mix64(static_cast<std::uint64_t>(r))));
            init = hmm::init_params(seqs, cfg.n_states, &jitter);
        }
        auto fit = hmm::baum_welch(init, seqs, cfg.em_tol, cfg.em_max_iter);
        if (!best || fit.log_likelihoods.back() > best->log_likelihoods.back()) best = std::move(fit);
    }
    return *best;
}

// ---------------------------------------------------------------------------
// Assessment
// ---------------------------------------------------------------------------

struct AssessmentResult {
    io::json report;
    hmm::HmmParams hmm_params;
    hmm::StateLabelMap label_map;
    forest::Forest forest_model;
    std::vector<std::string> rf_feature_names;
};

namespace detail {

inline double round_to(double v, int decimals) {
    double p = std::pow(10.0, decimals);
    return std::round(v * p) / p;
}

inline io::json metrics_to_json(const forest::Evaluation& ev) {
    io::json per_class = io::json::object();
    for (const auto& [cls, m] : ev.metrics.per_class) {
        per_class[prep::label_name(static_cast<prep::MaturityLabel>(cls))] = {
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"support", m.support},
            {"undefined_precision", m.undefined_precision}};
    }
    return io::json{{"confusion",
                     {{"classes", ev.confusion.class_values}, {"counts", ev.confusion.counts}}},
                    {"accuracy", ev.metrics.accuracy},
                    {"per_class", per_class},
                    {"macro",
                     {{"precision", ev.metrics.macro_precision},
                      {"recall", ev.metrics.macro_recall},
                      {"f1", ev.metrics.macro_f1}}},
                    {"kappa", ev.metrics.kappa},
                    {"n", ev.metrics.n}};
}

inline Matrix matrix_with_nulls(const Matrix& m, io::json& out) {
    out = io::json::array();
    for (const auto& row : m) {
        io::json jr = io::json::array();
        for (double v : row) jr.push_back(io::number_or_null(v));
        out.push_back(jr);
    }
    return m;
}

}  // namespace detail

// Runs Stages 1-5 end to end and assembles the report. `input_bytes` is the
// raw CSV content (for the digest); `records` its parsed form.
inline AssessmentResult run_assess(const survey::SurveyDefinition& def,
                                   const std::vector<survey::ResponseRecord>& records,
                                   const std::string& input_bytes, const Config& cfg,
                                   std::uint64_t seed) {
    AssessmentResult out;
    io::json& rep = out.report;

    rep["metadata"] = {{"tool_version", kToolVersion},
                       {"seed", seed},
                       {"input_digest", fnv1a(input_bytes)},
                       {"survey_schema_version", def.schema_version},
                       {"feature_count", def.feature_count()}};

    // Stage 1-2: validation, encoding, composites, labels.
    int violation_count = 0;
    for (const auto& rec : records) violation_count += static_cast<int>(
        survey::validate_record(def, rec).size());
    auto ds = prep::compute_composites(def, records, cfg.drop_missing_frac);
    if (ds.size() == 0) throw data_error("EmptyDataset", "no usable rows after cleaning");

    rep["validation"] = {{"n_input_rows", records.size()},
                         {"n_rows", ds.size()},
                         {"n_dropped", ds.dropped_rows.size()},
                         {"violations", violation_count}};

    // Descriptives and prevalence.
    {
        io::json desc = io::json::object();
        for (const auto& [name, s] : prep::describe(ds))
            desc[name] = {{"count", s.count}, {"mean", s.mean}, {"std", s.stddev},
                          {"min", s.min},     {"q25", s.q25},   {"q50", s.q50},
                          {"q75", s.q75},     {"max", s.max}};
        rep["descriptives"] = desc;

        io::json prev = io::json::object();
        for (const auto& q : def.questions) {
            if (q.scale.kind == survey::ScaleKind::MultiSelect) {
                io::json rows = io::json::array();
                for (const auto& [opt, pct] : prep::prevalence(def, records, q.id))
                    rows.push_back({{"option", opt}, {"percent", detail::round_to(pct, 1)}});
                prev[q.id] = rows;
            } else if (q.scale.kind == survey::ScaleKind::OrdinalRange) {
                prev[q.id] = {{"percent_at_least_one",
                               detail::round_to(prep::share_at_least(def, records, q.id, 1.0), 1)}};
            }
        }
        rep["prevalence"] = prev;

        io::json label_counts = io::json::object();
        for (auto l : ds.labels) {
            std::string name = prep::label_name(l);
            label_counts[name] = label_counts.value(name, 0) + 1;
        }
        rep["label_counts"] = label_counts;
    }

    // Stage 3: stratified split.
    std::vector<int> labels_int;
    for (auto l : ds.labels) labels_int.push_back(static_cast<int>(l));
    auto split = prep::stratified_split(labels_int, cfg.test_fraction, seed);
    rep["split"] = {{"train", split.train_rows.size()},
                    {"test", split.test_rows.size()},
                    {"warnings", split.warnings}};

    // Stage 4: HMM.
    auto orgseq = build_sequences(ds);
    std::vector<hmm::ObservationSequence> train_seqs =
        cfg.stacked ? std::vector<hmm::ObservationSequence>{hmm::stack_sequences(orgseq.seqs)}
                    : orgseq.seqs;
    auto fit = fit_hmm(train_seqs, cfg, seed);
    out.hmm_params = fit.params;
    out.label_map = hmm::map_states(fit.params);

    std::vector<int> row_state(ds.size(), -1);
    io::json orgs = io::json::array();
    for (std::size_t o = 0; o < orgseq.seqs.size(); ++o) {
        auto decoded = hmm::log_forward_backward(fit.params, orgseq.seqs[o]);
        auto cls = hmm::classify_org(orgseq.seqs[o].org_id, decoded, out.label_map);
        for (std::size_t t = 0; t < orgseq.dataset_rows[o].size(); ++t)
            row_state[orgseq.dataset_rows[o][t]] = decoded.states[t];
        orgs.push_back({{"org_id", cls.org_id},
                        {"dominant", prep::label_name(cls.dominant)},
                        {"confidence", cls.confidence},
                        {"state_counts", cls.state_counts},
                        {"log_likelihood", decoded.log_likelihood}});
    }
    auto trans = hmm::transition_report(fit.params, out.label_map);
    {
        io::json order = io::json::array();
        for (auto l : trans.order) order.push_back(prep::label_name(l));
        io::json label_map_json = io::json::array();
        for (auto l : out.label_map.labels) label_map_json.push_back(prep::label_name(l));
        rep["hmm"] = {{"n_states", fit.params.n_states},
                      {"converged", fit.converged},
                      {"iterations", fit.log_likelihoods.size()},
                      {"final_log_likelihood", fit.log_likelihoods.back()},
                      {"warnings", fit.warnings},
                      {"label_map", label_map_json},
                      {"organizations", orgs},
                      {"transitions",
                       {{"order", order}, {"matrix", trans.matrix}, {"persistence", trans.persistence}}}};
    }

    // Stage 5: RF validation on threshold labels.
    Matrix x = ds.features;
    out.rf_feature_names = ds.feature_names;
    if (cfg.include_hmm_state_feature) {
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i].push_back(row_state[i] >= 0 ? static_cast<double>(row_state[i]) : kAbsent);
        out.rf_feature_names.push_back("hmm_state");
    }

    Matrix xtr, xte;
    std::vector<int> ytr, yte;
    for (int r : split.train_rows) {
        xtr.push_back(x[r]);
        ytr.push_back(labels_int[r]);
    }
    for (int r : split.test_rows) {
        xte.push_back(x[r]);
        yte.push_back(labels_int[r]);
    }

    forest::ForestConfig fcfg;
    fcfg.n_trees = cfg.n_trees;
    fcfg.max_depth = cfg.max_depth;
    fcfg.min_samples_leaf = cfg.min_samples_leaf;
    out.forest_model = forest::fit_forest(xtr, ytr, fcfg, seed);

    std::vector<int> ypred;
    for (const auto& row : xte) ypred.push_back(forest::predict(out.forest_model, row));
    auto ev = forest::evaluate(yte, ypred);
    auto cv = forest::cross_validate(x, labels_int, cfg.cv_folds, fcfg, seed);
    auto importance = forest::feature_importance(out.forest_model);

    {
        io::json rf = detail::metrics_to_json(ev);
        rf["cv"] = {{"folds", cfg.cv_folds},
                    {"scores", cv.fold_scores},
                    {"mean", cv.mean},
                    {"std", cv.stddev},
                    {"warnings", cv.warnings}};
        std::vector<int> rank(importance.size());
        for (std::size_t j = 0; j < rank.size(); ++j) rank[j] = static_cast<int>(j);
        std::stable_sort(rank.begin(), rank.end(),
                         [&](int a, int b) { return importance[a] > importance[b]; });
        io::json top = io::json::array();
        for (int j = 0; j < std::min<int>(cfg.top_k, static_cast<int>(rank.size())); ++j)
            top.push_back({{"feature", out.rf_feature_names[rank[j]]},
                           {"importance", importance[rank[j]]}});
        rf["feature_importance_top"] = top;
        rep["forest"] = rf;
    }

    // Explainability: SHAP on the positive (highest) class, LIME per org.
    {
        Matrix background;
        {
            std::vector<int> rows(xtr.size());
            for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
            if (static_cast<int>(rows.size()) > cfg.background_cap) {
                Rng rng(mix64(seed ^ 0xbac9'0ffeULL));
                rng.shuffle(rows);
                rows.resize(cfg.background_cap);
                std::sort(rows.begin(), rows.end());
            }
            for (int r : rows) background.push_back(xtr[r]);
        }
        // Global importance averages |SHAP| over every class output (for two
        // classes this equals the positive-class magnitudes); the signed
        // correlation matrix uses the positive-class output.
        const int positive_class =
            static_cast<int>(out.forest_model.class_values.size()) - 1;
        const int n_classes = static_cast<int>(out.forest_model.class_values.size());
        Matrix sm;
        sm.reserve(x.size());
        explain::GlobalImportance global;
        global.mean_abs_shap.assign(x[0].size(), 0.0);
        for (const auto& row : x) {
            auto exp = explain::shap_values(out.forest_model, row, background);
            for (int cls = 0; cls < n_classes; ++cls)
                for (std::size_t j = 0; j < exp.values[cls].size(); ++j)
                    global.mean_abs_shap[j] += std::fabs(exp.values[cls][j]);
            sm.push_back(std::move(exp.values[positive_class]));
        }
        for (double& v : global.mean_abs_shap)
            v /= static_cast<double>(sm.size() * n_classes);
        global.ranking.resize(global.mean_abs_shap.size());
        for (std::size_t j = 0; j < global.ranking.size(); ++j)
            global.ranking[j] = static_cast<int>(j);
        std::stable_sort(global.ranking.begin(), global.ranking.end(), [&](int a, int b) {
            return global.mean_abs_shap[a] > global.mean_abs_shap[b];
        });

        io::json shap_top = io::json::array();
        for (int j = 0; j < std::min<int>(cfg.top_k, static_cast<int>(global.ranking.size())); ++j)
            shap_top.push_back({{"feature", out.rf_feature_names[global.ranking[j]]},
                                {"mean_abs_shap", global.mean_abs_shap[global.ranking[j]]}});

        io::json ex;
        ex["positive_class"] =
            prep::label_name(static_cast<prep::MaturityLabel>(
                out.forest_model.class_values[positive_class]));
        ex["global_shap_top"] = shap_top;
        try {
            ex["shap_rf_correlation"] =
                explain::importance_correlation(global.mean_abs_shap, importance);
        } catch (const Error& e) {
            ex["shap_rf_correlation"] = nullptr;
            ex["shap_rf_correlation_note"] = e.code();
        }

        {
            std::vector<int> top_feats(global.ranking.begin(),
                                       global.ranking.begin() +
                                           std::min<int>(cfg.corr_matrix_features,
                                                         static_cast<int>(global.ranking.size())));
            io::json corr_json;
            detail::matrix_with_nulls(explain::shap_correlation_matrix(sm, top_feats), corr_json);
            io::json names = io::json::array();
            for (int f : top_feats) names.push_back(out.rf_feature_names[f]);
            ex["shap_correlation_matrix"] = {{"features", names}, {"matrix", corr_json}};
        }

        if (cfg.run_lime) {
            auto tstats = explain::training_stats(x);
            const forest::Forest& fm = out.forest_model;
            explain::BlackBox bb = [&fm, positive_class](const std::vector<double>& pt) {
                return forest::predict_proba(fm, pt)[positive_class];
            };
            io::json limes = io::json::array();
            for (std::size_t o = 0; o < orgseq.seqs.size(); ++o) {
                std::vector<double> coeff_sum(x[0].size(), 0.0);
                double fid_sum = 0.0;
                for (int r : orgseq.dataset_rows[o]) {
                    auto le = explain::lime_explain(
                        bb, forest::impute_row(fm, x[r]), tstats, cfg.lime_samples,
                        cfg.lime_kernel_width, static_cast<int>(x[0].size()), cfg.lime_ridge,
                        mix64(seed ^ mix64(static_cast<std::uint64_t>(r) + 0x11e5)));
                    for (const auto& [f, c] : le.weights) coeff_sum[f] += c;
                    fid_sum += le.fidelity;
                }
                const double n = static_cast<double>(orgseq.dataset_rows[o].size());
                std::vector<int> rank(coeff_sum.size());
                for (std::size_t j = 0; j < rank.size(); ++j) rank[j] = static_cast<int>(j);
                std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) {
                    return std::fabs(coeff_sum[a]) > std::fabs(coeff_sum[b]);
                });
                io::json top = io::json::array();
                for (int j = 0; j < std::min<int>(cfg.top_k, static_cast<int>(rank.size())); ++j)
                    top.push_back({{"feature", out.rf_feature_names[rank[j]]},
                                   {"mean_coefficient", coeff_sum[rank[j]] / n}});
                double mean_contribution = 0.0;
                for (double c : coeff_sum) mean_contribution += c;
                mean_contribution /= (n * static_cast<double>(coeff_sum.size()));
                limes.push_back({{"org_id", orgseq.seqs[o].org_id},
                                 {"mean_fidelity", fid_sum / n},
                                 {"mean_contribution", mean_contribution},
                                 {"top_features", top}});
            }
            ex["lime_per_org"] = limes;
        }
        rep["explain"] = ex;
    }
    return out;
}

// Plain-text rendering of the assessment report.
inline std::string report_to_text(const io::json& rep) {
    std::ostringstream o;
    o << "IT-XML assessment report (tool " << rep["metadata"]["tool_version"].get<std::string>()
      << ", seed " << rep["metadata"]["seed"] << ")\n";
    o << "rows: " << rep["validation"]["n_rows"] << " (dropped "
      << rep["validation"]["n_dropped"] << ")\n\n";
    o << "Organization maturity (HMM):\n";
    for (const auto& org : rep["hmm"]["organizations"])
        o << "  " << org["org_id"].get<std::string>() << ": "
          << org["dominant"].get<std::string>() << "  confidence "
          << detail::round_to(org["confidence"].get<double>(), 3) << "\n";
    o << "\nRandom forest validation:\n";
    o << "  accuracy " << detail::round_to(rep["forest"]["accuracy"].get<double>(), 3)
      << ", kappa " << detail::round_to(rep["forest"]["kappa"].get<double>(), 3) << ", cv "
      << detail::round_to(rep["forest"]["cv"]["mean"].get<double>(), 3) << " +/- "
      << detail::round_to(rep["forest"]["cv"]["std"].get<double>(), 3) << "\n";
    o << "\nTop features (RF importance):\n";
    for (const auto& row : rep["forest"]["feature_importance_top"])
        o << "  " << row["feature"].get<std::string>() << "  "
          << detail::round_to(row["importance"].get<double>(), 4) << "\n";
    if (rep["explain"].contains("shap_rf_correlation") &&
        !rep["explain"]["shap_rf_correlation"].is_null())
        o << "\nSHAP-RF importance correlation: "
          << detail::round_to(rep["explain"]["shap_rf_correlation"].get<double>(), 3) << "\n";
    return o.str();
}

}  // namespace itxml::pipeline
