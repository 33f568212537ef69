// itxml: organizational insider-threat maturity assessment pipeline.
//
// Subcommands: assess | validate | explain | synth | recode.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric error.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "itxml/dataset.hpp"
#include "itxml/explain.hpp"
#include "itxml/json_io.hpp"
#include "itxml/pipeline.hpp"
#include "itxml/survey.hpp"
#include "itxml/synth.hpp"

namespace {

using itxml::io::json;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw itxml::data_error("FileUnreadable", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

itxml::pipeline::Config load_config_opt(const std::string& path) {
    if (path.empty()) return {};
    return itxml::pipeline::load_config(path);
}

void write_output(const std::string& out_path, const std::string& text) {
    if (out_path.empty() || out_path == "-")
        std::cout << text;
    else
        itxml::io::save_text(out_path, text);
}

int run(int argc, char** argv) {
    CLI::App app{"IT-XML insider-threat maturity assessment"};
    app.require_subcommand(1);

    std::string in_path, out_path, survey_path, config_path, format = "json";
    std::uint64_t seed = 42;
    int top_n = 10;

    auto add_common = [&](CLI::App* cmd, bool needs_survey) {
        cmd->add_option("--in", in_path, "input CSV path")->required();
        cmd->add_option("--out", out_path, "output path ('-' = stdout)");
        if (needs_survey)
            cmd->add_option("--survey", survey_path, "survey definition file")->required();
        cmd->add_option("--config", config_path, "pipeline config file");
        cmd->add_option("--seed", seed, "random seed (default 42)");
        cmd->add_option("--format", format, "json|text")->check(CLI::IsMember({"json", "text"}));
        cmd->add_option("--top", top_n, "number of ranked entries to emit");
    };

    auto* assess = app.add_subcommand("assess", "run the full five-stage assessment");
    add_common(assess, true);
    std::string model_prefix;
    assess->add_option("--models", model_prefix,
                       "prefix for serialized model artifacts (default: <out> base)");

    auto* validate = app.add_subcommand("validate", "random-forest validation metrics only");
    add_common(validate, true);

    auto* explain_cmd = app.add_subcommand("explain", "SHAP / LIME explanations from saved models");
    add_common(explain_cmd, true);
    std::string forest_path, org_selector;
    int row_selector = -1;
    explain_cmd->add_option("--forest", forest_path, "serialized forest JSON")->required();
    explain_cmd->add_option("--org", org_selector, "explain one organization");
    explain_cmd->add_option("--row", row_selector, "explain one dataset row");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset from a scenario spec");
    std::string scenario_path, truth_path;
    synth->add_option("--scenario", scenario_path, "scenario spec JSON")->required();
    synth->add_option("--survey", survey_path, "survey definition file")->required();
    synth->add_option("--out", out_path, "output CSV path");
    synth->add_option("--truth", truth_path, "ground-truth sidecar JSON path");

    auto* recode = app.add_subcommand("recode", "recode one raw answer through the survey scales");
    std::string question_id, raw_value;
    recode->add_option("--survey", survey_path, "survey definition file")->required();
    recode->add_option("--question", question_id, "question id")->required();
    recode->add_option("--value", raw_value, "raw answer")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        // Normalize CLI11's exit codes: 0 for --help/--version, 1 otherwise.
        return rc == 0 ? 0 : 1;
    }

    if (assess->parsed()) {
        auto def = itxml::survey::load_survey_definition(survey_path);
        auto cfg = load_config_opt(config_path);
        cfg.top_k = top_n;
        std::string bytes = slurp(in_path);
        std::istringstream is(bytes);
        auto records = itxml::prep::load_dataset(def, is);
        auto result = itxml::pipeline::run_assess(def, records, bytes, cfg, seed);

        std::string base = model_prefix;
        if (base.empty() && !out_path.empty() && out_path != "-") {
            base = out_path;
            auto dot = base.rfind(".json");
            if (dot != std::string::npos) base = base.substr(0, dot);
        }
        if (!base.empty()) {
            itxml::io::save_text(base + ".hmm.json",
                                 itxml::io::to_json(result.hmm_params, result.label_map, seed).dump(2) + "\n");
            itxml::io::save_text(base + ".forest.json",
                                 itxml::io::to_json(result.forest_model).dump() + "\n");
        }
        write_output(out_path, format == "text" ? itxml::pipeline::report_to_text(result.report)
                                                : result.report.dump(2) + "\n");
        return 0;
    }

    if (validate->parsed()) {
        auto def = itxml::survey::load_survey_definition(survey_path);
        auto cfg = load_config_opt(config_path);
        auto records = itxml::prep::load_dataset(def, in_path);
        auto ds = itxml::prep::compute_composites(def, records, cfg.drop_missing_frac);
        if (ds.size() == 0) throw itxml::data_error("EmptyDataset", "no usable rows after cleaning");
        std::vector<int> y;
        for (auto l : ds.labels) y.push_back(static_cast<int>(l));
        auto split = itxml::prep::stratified_split(y, cfg.test_fraction, seed);
        itxml::Matrix xtr, xte;
        std::vector<int> ytr, yte;
        for (int r : split.train_rows) {
            xtr.push_back(ds.features[r]);
            ytr.push_back(y[r]);
        }
        for (int r : split.test_rows) {
            xte.push_back(ds.features[r]);
            yte.push_back(y[r]);
        }
        itxml::forest::ForestConfig fcfg;
        fcfg.n_trees = cfg.n_trees;
        fcfg.max_depth = cfg.max_depth;
        fcfg.min_samples_leaf = cfg.min_samples_leaf;
        auto forest = itxml::forest::fit_forest(xtr, ytr, fcfg, seed);
        std::vector<int> ypred;
        for (const auto& row : xte) ypred.push_back(itxml::forest::predict(forest, row));
        auto ev = itxml::forest::evaluate(yte, ypred);
        auto cv = itxml::forest::cross_validate(ds.features, y, cfg.cv_folds, fcfg, seed);

        json rep = itxml::pipeline::detail::metrics_to_json(ev);
        rep["cv"] = {{"folds", cfg.cv_folds},
                     {"scores", cv.fold_scores},
                     {"mean", cv.mean},
                     {"std", cv.stddev},
                     {"warnings", cv.warnings}};
        for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
        for (const auto& w : cv.warnings) std::cerr << "warning: " << w << "\n";
        write_output(out_path, rep.dump(2) + "\n");
        return 0;
    }

    if (explain_cmd->parsed()) {
        auto def = itxml::survey::load_survey_definition(survey_path);
        auto cfg = load_config_opt(config_path);
        cfg.top_k = top_n;
        auto records = itxml::prep::load_dataset(def, in_path);
        auto ds = itxml::prep::compute_composites(def, records, cfg.drop_missing_frac);
        auto forest = itxml::io::forest_from_json(itxml::io::load_json(forest_path));

        itxml::Matrix x = ds.features;
        if (forest.n_features == static_cast<int>(ds.feature_names.size()) + 1) {
            // Model trained with the HMM-state feature; it is absent here and
            // gets median-imputed.
            for (auto& row : x) row.push_back(itxml::kAbsent);
        } else if (forest.n_features != static_cast<int>(ds.feature_names.size())) {
            throw itxml::data_error("DimensionMismatch", "forest does not match this survey");
        }

        std::vector<int> selected;
        if (!org_selector.empty()) {
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (ds.org_index[i] == org_selector) selected.push_back(static_cast<int>(i));
            if (selected.empty())
                throw itxml::data_error("UnknownSelector", "no rows for org '" + org_selector + "'");
        } else if (row_selector >= 0) {
            if (row_selector >= static_cast<int>(ds.size()))
                throw itxml::data_error("UnknownSelector",
                                        "row " + std::to_string(row_selector) + " out of range");
            selected.push_back(row_selector);
        }

        itxml::Matrix background = x;
        if (static_cast<int>(background.size()) > cfg.background_cap) {
            itxml::Rng rng(itxml::mix64(seed ^ 0xbac90ffeULL));
            rng.shuffle(background);
            background.resize(cfg.background_cap);
        }
        const int positive_class = static_cast<int>(forest.class_values.size()) - 1;
        auto sm = itxml::explain::shap_matrix(forest, x, background, positive_class);

        std::vector<double> mean_abs(forest.n_features, 0.0);
        for (const auto& row : sm)
            for (int j = 0; j < forest.n_features; ++j) mean_abs[j] += std::fabs(row[j]);
        for (double& v : mean_abs) v /= static_cast<double>(sm.size());
        std::vector<int> rank(forest.n_features);
        for (int j = 0; j < forest.n_features; ++j) rank[j] = j;
        std::stable_sort(rank.begin(), rank.end(),
                         [&](int a, int b) { return mean_abs[a] > mean_abs[b]; });

        auto feature_name = [&](int j) {
            return j < static_cast<int>(ds.feature_names.size()) ? ds.feature_names[j]
                                                                 : std::string("hmm_state");
        };

        json out;
        json global = json::array();
        for (int j = 0; j < std::min(top_n, forest.n_features); ++j)
            global.push_back({{"feature", feature_name(rank[j])},
                              {"mean_abs_shap", mean_abs[rank[j]]}});
        out["global_shap_top"] = global;

        if (!selected.empty()) {
            auto tstats = itxml::explain::training_stats(x);
            itxml::explain::BlackBox bb = [&forest, positive_class](const std::vector<double>& pt) {
                return itxml::forest::predict_proba(forest, pt)[positive_class];
            };
            json inst = json::array();
            for (int r : selected) {
                auto exp = itxml::explain::shap_values(forest, x[r], background);
                auto lime = itxml::explain::lime_explain(
                    bb, itxml::forest::impute_row(forest, x[r]), tstats, cfg.lime_samples,
                    cfg.lime_kernel_width, top_n, cfg.lime_ridge,
                    itxml::mix64(seed ^ itxml::mix64(static_cast<std::uint64_t>(r) + 0x11e5)));
                json lw = json::array();
                for (const auto& [f, c] : lime.weights)
                    lw.push_back({{"feature", feature_name(f)}, {"coefficient", c}});
                inst.push_back({{"row", r},
                                {"org_id", ds.org_index[r]},
                                {"respondent_id", ds.respondent_index[r]},
                                {"shap",
                                 {{"base_value", exp.base_values[positive_class]},
                                  {"values", exp.values[positive_class]}}},
                                {"lime",
                                 {{"intercept", lime.intercept},
                                  {"fidelity", lime.fidelity},
                                  {"weights", lw}}}});
            }
            out["instances"] = inst;
        }
        write_output(out_path, out.dump(2) + "\n");
        return 0;
    }

    if (synth->parsed()) {
        auto def = itxml::survey::load_survey_definition(survey_path);
        auto spec = itxml::io::scenario_from_json(itxml::io::load_json(scenario_path));
        auto sample = itxml::synth::sample_dataset(def, spec);
        write_output(out_path, itxml::synth::to_csv(def, sample.records));
        if (!truth_path.empty()) {
            json truth = {{"scenario", itxml::io::to_json(spec)},
                          {"true_states", sample.true_states}};
            itxml::io::save_text(truth_path, truth.dump(2) + "\n");
        }
        return 0;
    }

    if (recode->parsed()) {
        auto def = itxml::survey::load_survey_definition(survey_path);
        const auto* q = def.find(question_id);
        if (!q) throw itxml::data_error("UnknownQuestion", question_id);
        std::cout << itxml::survey::recode(q->scale, raw_value) << "\n";
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const itxml::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
            case itxml::ErrorKind::Usage: return 1;
            case itxml::ErrorKind::Data: return 2;
            case itxml::ErrorKind::Numeric: return 3;
        }
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
