#pragma once

// Questionnaire schema: sections, response scales, recode maps, and the
// survey definition file parser.

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "itxml/core.hpp"

namespace itxml::survey {

enum class Section {
    ThreatPatterns,
    AccessControl,
    SecurityMeasures,
    PolicyGaps,
    ProactiveMeasures,
};

inline const char* section_name(Section s) {
    switch (s) {
        case Section::ThreatPatterns: return "ThreatPatterns";
        case Section::AccessControl: return "AccessControl";
        case Section::SecurityMeasures: return "SecurityMeasures";
        case Section::PolicyGaps: return "PolicyGaps";
        case Section::ProactiveMeasures: return "ProactiveMeasures";
    }
    return "?";
}

inline Section parse_section(const std::string& s) {
    if (s == "ThreatPatterns") return Section::ThreatPatterns;
    if (s == "AccessControl") return Section::AccessControl;
    if (s == "SecurityMeasures") return Section::SecurityMeasures;
    if (s == "PolicyGaps") return Section::PolicyGaps;
    if (s == "ProactiveMeasures") return Section::ProactiveMeasures;
    throw data_error("UnknownSection", "unknown section '" + s + "'");
}

inline const std::vector<Section>& all_sections() {
    static const std::vector<Section> s = {
        Section::ThreatPatterns, Section::AccessControl, Section::SecurityMeasures,
        Section::PolicyGaps, Section::ProactiveMeasures};
    return s;
}

enum class ScaleKind { Likert5, OrdinalRange, MultiSelect, Count };

// Ordered label -> value map for OrdinalRange questions. Values must be
// strictly increasing in label order so ordinality survives recoding.
struct RecodeMap {
    std::vector<std::pair<std::string, double>> entries;

    std::optional<double> value_of(const std::string& label) const {
        for (const auto& [lab, val] : entries)
            if (lab == label) return val;
        return std::nullopt;
    }

    std::optional<std::string> label_of(double value) const {
        for (const auto& [lab, val] : entries)
            if (val == value) return lab;
        return std::nullopt;
    }

    void check() const {
        for (std::size_t i = 1; i < entries.size(); ++i) {
            if (entries[i].second <= entries[i - 1].second)
                throw data_error("NonMonotoneMap", "recode values must strictly increase: '" +
                                                       entries[i].first + "'");
            for (std::size_t j = 0; j < i; ++j)
                if (entries[i].first == entries[j].first)
                    throw data_error("DuplicateLabel", "duplicate label '" + entries[i].first + "'");
        }
        for (const auto& [lab, val] : entries)
            if (val < 0.0) throw data_error("NegativeValue", "recode value for '" + lab + "' < 0");
    }
};

struct ResponseScale {
    ScaleKind kind = ScaleKind::Likert5;
    RecodeMap map;                      // OrdinalRange only
    std::vector<std::string> options;   // MultiSelect only
};

struct QuestionSpec {
    std::string id;
    Section section = Section::ThreatPatterns;
    std::string prompt;
    ResponseScale scale;

    // Number of numeric features this question contributes after encoding.
    int feature_count() const {
        return scale.kind == ScaleKind::MultiSelect ? static_cast<int>(scale.options.size()) : 1;
    }
};

struct SurveyDefinition {
    int schema_version = 1;
    std::vector<QuestionSpec> questions;
    // Section -> composite dimension name. Configurable in the definition file.
    std::map<Section, std::string> dimension_of;

    int feature_count() const {
        int n = 0;
        for (const auto& q : questions) n += q.feature_count();
        return n;
    }

    const QuestionSpec* find(const std::string& id) const {
        for (const auto& q : questions)
            if (q.id == id) return &q;
        return nullptr;
    }

    // Feature column names in question order; MultiSelect expands to one
    // binary column per option ("<qid>.<option>").
    std::vector<std::string> feature_names() const {
        std::vector<std::string> out;
        for (const auto& q : questions) {
            if (q.scale.kind == ScaleKind::MultiSelect)
                for (const auto& opt : q.scale.options) out.push_back(q.id + "." + opt);
            else
                out.push_back(q.id);
        }
        return out;
    }

    void check() const {
        std::set<std::string> ids;
        for (const auto& q : questions) {
            if (!ids.insert(q.id).second)
                throw data_error("DuplicateQuestionId", "question id '" + q.id + "' repeats");
            if (q.scale.kind == ScaleKind::OrdinalRange) {
                if (q.scale.map.entries.empty())
                    throw data_error("EmptyMap", "ordinal question '" + q.id + "' has no options");
                q.scale.map.check();
            }
            if (q.scale.kind == ScaleKind::MultiSelect && q.scale.options.empty())
                throw data_error("EmptyOptions", "multi-select question '" + q.id + "' has no options");
        }
        for (Section s : all_sections())
            if (!dimension_of.count(s))
                throw data_error("MissingDimension",
                                 std::string("no dimension mapped for section ") + section_name(s));
    }
};

struct ResponseRecord {
    std::string org_id;
    std::string respondent_id;
    int row_index = 0;  // file order
    std::map<std::string, std::string> answers;  // question id -> raw answer
};

namespace detail {
inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_number(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}
}  // namespace detail

// Deterministic recode of one raw answer under a scale. MultiSelect answers
// are per-option and handled by the encoder, not here.
inline double recode(const ResponseScale& scale, const std::string& raw) {
    const std::string s = detail::trim(raw);
    switch (scale.kind) {
        case ScaleKind::Likert5: {
            double v;
            if (!detail::parse_number(s, v) || v != std::floor(v))
                throw data_error("UnknownLabel", "Likert answer '" + raw + "' is not an integer");
            if (v < 1.0 || v > 5.0)
                throw data_error("OutOfScale", "Likert answer " + s + " outside [1,5]");
            return v;
        }
        case ScaleKind::Count: {
            double v;
            if (!detail::parse_number(s, v) || v != std::floor(v) || v < 0.0)
                throw data_error("UnknownLabel", "count answer '" + raw + "' is not a non-negative integer");
            return v;
        }
        case ScaleKind::OrdinalRange: {
            if (auto v = scale.map.value_of(s)) return *v;
            throw data_error("UnknownLabel", "label '" + raw + "' not in recode map");
        }
        case ScaleKind::MultiSelect:
            throw data_error("WrongScale", "recode() does not apply to multi-select answers");
    }
    throw data_error("UnknownScale", "unreachable");
}

struct Violation {
    std::string question_id;
    std::string kind;  // MissingAnswer | UnknownLabel | OutOfScale | UnknownQuestion
    std::string detail;
};

// Soft validation: violations are data, not failures. A record is clean iff
// the report is empty.
inline std::vector<Violation> validate_record(const SurveyDefinition& survey,
                                              const ResponseRecord& rec) {
    std::vector<Violation> out;
    for (const auto& q : survey.questions) {
        auto it = rec.answers.find(q.id);
        if (it == rec.answers.end() || detail::trim(it->second).empty()) {
            // An empty multi-select cell means "nothing selected", which is valid.
            if (q.scale.kind != ScaleKind::MultiSelect)
                out.push_back({q.id, "MissingAnswer", "no answer given"});
            continue;
        }
        if (q.scale.kind == ScaleKind::MultiSelect) {
            std::stringstream ss(it->second);
            std::string part;
            while (std::getline(ss, part, ';')) {
                part = detail::trim(part);
                if (part.empty()) continue;
                if (std::find(q.scale.options.begin(), q.scale.options.end(), part) ==
                    q.scale.options.end())
                    out.push_back({q.id, "UnknownLabel", "option '" + part + "' not declared"});
            }
            continue;
        }
        try {
            recode(q.scale, it->second);
        } catch (const Error& e) {
            out.push_back({q.id, e.code(), it->second});
        }
    }
    for (const auto& [qid, raw] : rec.answers)
        if (!survey.find(qid)) out.push_back({qid, "UnknownQuestion", raw});
    return out;
}

// ---------------------------------------------------------------------------
// Definition file parser. Format: "key = value" lines grouped under
// [dimensions] and repeated [question] blocks; '#' starts a comment.
// ---------------------------------------------------------------------------

inline SurveyDefinition parse_survey_definition(std::istream& in) {
    SurveyDefinition def;
    def.schema_version = 0;
    QuestionSpec cur;
    enum class Block { None, Dimensions, Question } block = Block::None;
    bool have_question = false;

    auto flush = [&] {
        if (!have_question) return;
        if (cur.id.empty()) throw data_error("SchemaMismatch", "question block without an id");
        def.questions.push_back(cur);
        cur = QuestionSpec{};
        have_question = false;
    };

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (s == "[dimensions]") {
            flush();
            block = Block::Dimensions;
            continue;
        }
        if (s == "[question]") {
            flush();
            block = Block::Question;
            have_question = true;
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw data_error("SchemaMismatch",
                             "line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = detail::trim(s.substr(0, eq));
        std::string val = detail::trim(s.substr(eq + 1));

        if (block == Block::None) {
            if (key == "schema_version") def.schema_version = std::stoi(val);
            else throw data_error("SchemaMismatch", "unexpected top-level key '" + key + "'");
        } else if (block == Block::Dimensions) {
            def.dimension_of[parse_section(key)] = val;
        } else {
            if (key == "id") cur.id = val;
            else if (key == "section") cur.section = parse_section(val);
            else if (key == "prompt") cur.prompt = val;
            else if (key == "scale") {
                if (val == "likert5") cur.scale.kind = ScaleKind::Likert5;
                else if (val == "ordinal_range") cur.scale.kind = ScaleKind::OrdinalRange;
                else if (val == "multi_select") cur.scale.kind = ScaleKind::MultiSelect;
                else if (val == "count") cur.scale.kind = ScaleKind::Count;
                else throw data_error("SchemaMismatch", "unknown scale '" + val + "'");
            } else if (key == "option") {
                auto arrow = val.find("->");
                if (arrow != std::string::npos) {
                    std::string lab = detail::trim(val.substr(0, arrow));
                    double num;
                    if (!detail::parse_number(detail::trim(val.substr(arrow + 2)), num))
                        throw data_error("SchemaMismatch", "bad option value in '" + val + "'");
                    cur.scale.map.entries.emplace_back(lab, num);
                } else {
                    cur.scale.options.push_back(val);
                }
            } else {
                throw data_error("SchemaMismatch", "unknown question key '" + key + "'");
            }
        }
    }
    flush();
    if (def.schema_version != 1)
        throw data_error("SchemaMismatch",
                         "unsupported schema_version " + std::to_string(def.schema_version));
    def.check();
    return def;
}

inline SurveyDefinition load_survey_definition(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("FileUnreadable", "cannot open survey definition '" + path + "'");
    return parse_survey_definition(in);
}

}  // namespace itxml::survey
