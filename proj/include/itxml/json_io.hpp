#pragma once

// JSON (de)serialization for model artifacts and scenario specs, plus a small
// structural schema checker for reports.

#include <fstream>
#include <string>

#include <json.hpp>

#include "itxml/core.hpp"
#include "itxml/forest.hpp"
#include "itxml/hmm.hpp"
#include "itxml/synth.hpp"

namespace itxml::io {

using json = nlohmann::ordered_json;

// NaN is not representable in JSON; absent values serialize as null.
inline json number_or_null(double v) { return is_absent(v) ? json(nullptr) : json(v); }

// ---------------------------------------------------------------------------
// HMM params
// ---------------------------------------------------------------------------

inline json to_json(const hmm::HmmParams& p) {
    return json{{"n_states", p.n_states}, {"dim", p.dim},        {"pi", p.pi},
                {"A", p.trans},           {"means", p.means},    {"variances", p.variances}};
}

inline hmm::HmmParams hmm_params_from_json(const json& j) {
    hmm::HmmParams p;
    p.n_states = j.at("n_states").get<int>();
    p.dim = j.at("dim").get<int>();
    p.pi = j.at("pi").get<std::vector<double>>();
    p.trans = j.at("A").get<Matrix>();
    p.means = j.at("means").get<Matrix>();
    p.variances = j.at("variances").get<Matrix>();
    p.check();
    return p;
}

inline json to_json(const hmm::HmmParams& p, const hmm::StateLabelMap& map, std::uint64_t seed) {
    json j = to_json(p);
    j["seed"] = seed;
    json labels = json::array();
    for (auto l : map.labels) labels.push_back(prep::label_name(l));
    j["label_map"] = labels;
    return j;
}

inline hmm::StateLabelMap label_map_from_json(const json& j) {
    hmm::StateLabelMap map;
    for (const auto& name : j) {
        std::string s = name.get<std::string>();
        if (s == "Basic") map.labels.push_back(prep::MaturityLabel::Basic);
        else if (s == "Developing") map.labels.push_back(prep::MaturityLabel::Developing);
        else if (s == "Advanced") map.labels.push_back(prep::MaturityLabel::Advanced);
        else throw data_error("SchemaMismatch", "unknown maturity label '" + s + "'");
    }
    return map;
}

// ---------------------------------------------------------------------------
// Forest
// ---------------------------------------------------------------------------

inline json node_to_json(const forest::Tree& t, int idx) {
    const forest::TreeNode& n = t.nodes[idx];
    if (n.feature < 0) return json{{"leaf", n.leaf_totals}};
    return json{{"feature", n.feature},
                {"threshold", n.threshold},
                {"left", node_to_json(t, n.left)},
                {"right", node_to_json(t, n.right)}};
}

inline int node_from_json(const json& j, forest::Tree& t) {
    forest::TreeNode n;
    if (j.contains("leaf")) {
        n.leaf_totals = j.at("leaf").get<std::vector<double>>();
        t.nodes.push_back(n);
        return static_cast<int>(t.nodes.size()) - 1;
    }
    n.feature = j.at("feature").get<int>();
    n.threshold = j.at("threshold").get<double>();
    t.nodes.push_back(n);
    int idx = static_cast<int>(t.nodes.size()) - 1;
    int l = node_from_json(j.at("left"), t);
    int r = node_from_json(j.at("right"), t);
    t.nodes[idx].left = l;
    t.nodes[idx].right = r;
    return idx;
}

inline json to_json(const forest::Forest& f) {
    json trees = json::array();
    for (const auto& t : f.trees) trees.push_back(node_to_json(t, 0));
    return json{{"config",
                 {{"n_trees", f.config.n_trees},
                  {"max_depth", f.config.max_depth},
                  {"min_samples_leaf", f.config.min_samples_leaf},
                  {"balanced_class_weights", f.config.balanced_class_weights}}},
                {"seed", f.seed},
                {"n_features", f.n_features},
                {"class_values", f.class_values},
                {"class_weights", f.class_weights},
                {"feature_medians", f.feature_medians},
                {"raw_importance", f.raw_importance},
                {"trees", trees}};
}

inline forest::Forest forest_from_json(const json& j) {
    forest::Forest f;
    const json& c = j.at("config");
    f.config.n_trees = c.at("n_trees").get<int>();
    f.config.max_depth = c.at("max_depth").get<int>();
    f.config.min_samples_leaf = c.at("min_samples_leaf").get<int>();
    f.config.balanced_class_weights = c.at("balanced_class_weights").get<bool>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.n_features = j.at("n_features").get<int>();
    f.class_values = j.at("class_values").get<std::vector<int>>();
    f.class_weights = j.at("class_weights").get<std::vector<double>>();
    f.feature_medians = j.at("feature_medians").get<std::vector<double>>();
    f.raw_importance = j.at("raw_importance").get<std::vector<double>>();
    for (const auto& tj : j.at("trees")) {
        forest::Tree t;
        node_from_json(tj, t);
        f.trees.push_back(std::move(t));
    }
    return f;
}

// ---------------------------------------------------------------------------
// Scenario spec
// ---------------------------------------------------------------------------

inline synth::ScenarioSpec scenario_from_json(const json& j) {
    synth::ScenarioSpec s;
    s.name = j.value("name", std::string("scenario"));
    s.n_orgs = j.at("n_orgs").get<int>();
    s.respondents_per_org = j.at("respondents_per_org").get<int>();
    s.item_noise_std = j.at("item_noise_std").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.target_regime = j.value("target_regime", std::string("mixed"));
    s.true_params = hmm_params_from_json(j.at("true_params"));
    if (j.contains("categorical_freq")) {
        for (const auto& [qid, table] : j.at("categorical_freq").items()) {
            std::vector<std::pair<std::string, double>> entries;
            for (const auto& row : table)
                entries.emplace_back(row.at(0).get<std::string>(), row.at(1).get<double>());
            s.categorical_freq[qid] = entries;
        }
    }
    return s;
}

inline json to_json(const synth::ScenarioSpec& s) {
    json freq = json::object();
    for (const auto& [qid, table] : s.categorical_freq) {
        json rows = json::array();
        for (const auto& [label, frac] : table) rows.push_back(json::array({label, frac}));
        freq[qid] = rows;
    }
    return json{{"name", s.name},
                {"n_orgs", s.n_orgs},
                {"respondents_per_org", s.respondents_per_org},
                {"item_noise_std", s.item_noise_std},
                {"seed", s.seed},
                {"target_regime", s.target_regime},
                {"true_params", to_json(s.true_params)},
                {"categorical_freq", freq}};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("FileUnreadable", "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("SchemaMismatch", std::string("bad JSON in '") + path + "': " + e.what());
    }
}

inline void save_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("FileUnwritable", "cannot write '" + path + "'");
    out << text;
}

// ---------------------------------------------------------------------------
// Structural schema check: supports type/properties/required/items, which is
// all the report schema uses.
// ---------------------------------------------------------------------------

inline void check_schema(const json& doc, const json& schema, const std::string& where = "$") {
    if (schema.contains("type")) {
        const std::string t = schema.at("type").get<std::string>();
        bool ok = (t == "object" && doc.is_object()) || (t == "array" && doc.is_array()) ||
                  (t == "string" && doc.is_string()) ||
                  (t == "number" && (doc.is_number() || doc.is_null())) ||
                  (t == "integer" && doc.is_number_integer()) ||
                  (t == "boolean" && doc.is_boolean());
        if (!ok)
            throw data_error("SchemaViolation", where + ": expected " + t + ", got " +
                                                    std::string(doc.type_name()));
    }
    if (schema.contains("required"))
        for (const auto& key : schema.at("required"))
            if (!doc.contains(key.get<std::string>()))
                throw data_error("SchemaViolation",
                                 where + ": missing required key '" + key.get<std::string>() + "'");
    if (schema.contains("properties") && doc.is_object())
        for (const auto& [key, sub] : schema.at("properties").items())
            if (doc.contains(key)) check_schema(doc.at(key), sub, where + "." + key);
    if (schema.contains("items") && doc.is_array())
        for (const auto& item : doc) check_schema(item, schema.at("items"), where + "[]");
}

}  // namespace itxml::io
