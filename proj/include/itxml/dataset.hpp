#pragma once

// Loading, encoding, composite scoring, threshold labeling, stratified
// splitting, and descriptive statistics.

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "itxml/core.hpp"
#include "itxml/survey.hpp"

namespace itxml::prep {

using survey::ResponseRecord;
using survey::Section;
using survey::SurveyDefinition;

enum class MaturityLabel : int { Basic = 0, Developing = 1, Advanced = 2 };

inline const char* label_name(MaturityLabel l) {
    switch (l) {
        case MaturityLabel::Basic: return "Basic";
        case MaturityLabel::Developing: return "Developing";
        case MaturityLabel::Advanced: return "Advanced";
    }
    return "?";
}

// Band thresholds: < 2.5 (or absent) Basic, [2.5, 3.5] Developing, > 3.5 Advanced.
inline MaturityLabel score_to_label(std::optional<double> score) {
    if (!score.has_value()) return MaturityLabel::Basic;
    if (*score < 2.5) return MaturityLabel::Basic;
    if (*score <= 3.5) return MaturityLabel::Developing;
    return MaturityLabel::Advanced;
}

// Canonical composite dimension order, used for HMM observation vectors too.
inline const std::vector<std::string>& dimension_names() {
    static const std::vector<std::string> d = {"security_maturity", "threat_awareness",
                                               "access_control", "policy_framework"};
    return d;
}

struct CompositeScores {
    // Indexed like dimension_names(); absent when a respondent has no items
    // in that dimension.
    std::array<std::optional<double>, 4> dims;
    std::optional<double> overall;

    std::optional<double> dim(const std::string& name) const {
        for (std::size_t i = 0; i < dimension_names().size(); ++i)
            if (dimension_names()[i] == name) return dims[i];
        throw data_error("UnknownDimension", name);
    }
};

struct ScoredDataset {
    std::vector<std::string> feature_names;
    Matrix features;  // [n x feature_count], kAbsent for missing
    std::vector<CompositeScores> composites;
    std::vector<MaturityLabel> labels;
    std::vector<std::string> org_index;
    std::vector<std::string> respondent_index;
    std::vector<int> dropped_rows;  // row_index of rows removed during cleaning

    std::size_t size() const { return features.size(); }
};

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

namespace detail {

// Minimal CSV splitter with double-quote support.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

}  // namespace detail

// Reads records in file order. Hard failures (bad header, duplicate keys)
// throw; per-answer problems are left for validate_record.
inline std::vector<ResponseRecord> load_dataset(const SurveyDefinition& survey, std::istream& in) {
    std::string header;
    if (!std::getline(in, header))
        throw data_error("SchemaMismatch", "input has no header row");
    auto cols = detail::split_csv_line(header);
    if (cols.size() < 2 || cols[0] != "org_id" || cols[1] != "respondent_id")
        throw data_error("SchemaMismatch", "header must start with org_id,respondent_id");
    for (std::size_t c = 2; c < cols.size(); ++c)
        if (!survey.find(cols[c]))
            throw data_error("SchemaMismatch", "header column '" + cols[c] +
                                                   "' is not a declared question id");

    std::vector<ResponseRecord> records;
    std::set<std::pair<std::string, std::string>> keys;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != cols.size())
            throw data_error("SchemaMismatch", "row " + std::to_string(row + 1) + " has " +
                                                   std::to_string(cells.size()) + " cells, expected " +
                                                   std::to_string(cols.size()));
        ResponseRecord rec;
        rec.org_id = cells[0];
        rec.respondent_id = cells[1];
        rec.row_index = row;
        if (!keys.insert({rec.org_id, rec.respondent_id}).second)
            throw data_error("DuplicateKey", "row " + std::to_string(row + 1) + ": (" + rec.org_id +
                                                 ", " + rec.respondent_id + ") repeats");
        for (std::size_t c = 2; c < cols.size(); ++c) rec.answers[cols[c]] = cells[c];
        records.push_back(std::move(rec));
        ++row;
    }
    return records;
}

inline std::vector<ResponseRecord> load_dataset(const SurveyDefinition& survey,
                                                const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("FileUnreadable", "cannot open '" + path + "'");
    return load_dataset(survey, in);
}

// ---------------------------------------------------------------------------
// Encoding and composites
// ---------------------------------------------------------------------------

// One record -> numeric feature row (kAbsent for missing or unparseable answers).
inline std::vector<double> encode_record(const SurveyDefinition& survey,
                                         const ResponseRecord& rec) {
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(survey.feature_count()));
    for (const auto& q : survey.questions) {
        auto it = rec.answers.find(q.id);
        const bool present = it != rec.answers.end() && !survey::detail::trim(it->second).empty();
        if (q.scale.kind == survey::ScaleKind::MultiSelect) {
            std::set<std::string> selected;
            if (present) {
                std::stringstream ss(it->second);
                std::string part;
                while (std::getline(ss, part, ';')) {
                    part = survey::detail::trim(part);
                    if (!part.empty()) selected.insert(part);
                }
            }
            for (const auto& opt : q.scale.options)
                row.push_back(selected.count(opt) ? 1.0 : 0.0);
            continue;
        }
        if (!present) {
            row.push_back(kAbsent);
            continue;
        }
        try {
            row.push_back(survey::recode(q.scale, it->second));
        } catch (const Error&) {
            row.push_back(kAbsent);
        }
    }
    return row;
}

// Composite scores: per-dimension mean of recoded Likert items in the
// sections mapped to that dimension, absent items ignored; overall is the
// item-count-weighted mean over all contributing items. Rows with more than
// `drop_missing_frac` of answers missing are removed during cleaning.
inline ScoredDataset compute_composites(const SurveyDefinition& survey,
                                        const std::vector<ResponseRecord>& records,
                                        double drop_missing_frac = 0.5) {
    ScoredDataset ds;
    ds.feature_names = survey.feature_names();

    std::map<std::string, std::size_t> dim_index;
    for (std::size_t i = 0; i < dimension_names().size(); ++i)
        dim_index[dimension_names()[i]] = i;
    for (const auto& [sec, dim] : survey.dimension_of)
        if (!dim_index.count(dim))
            throw data_error("UnknownDimension", "section " + std::string(survey::section_name(sec)) +
                                                     " maps to undeclared dimension '" + dim + "'");

    for (const auto& rec : records) {
        auto row = encode_record(survey, rec);

        std::size_t n_scalar = 0, n_missing = 0;
        {
            std::size_t col = 0;
            for (const auto& q : survey.questions) {
                if (q.scale.kind == survey::ScaleKind::MultiSelect) {
                    col += q.scale.options.size();
                    continue;
                }
                ++n_scalar;
                if (is_absent(row[col])) ++n_missing;
                ++col;
            }
        }
        if (n_scalar > 0 &&
            static_cast<double>(n_missing) > drop_missing_frac * static_cast<double>(n_scalar)) {
            ds.dropped_rows.push_back(rec.row_index);
            continue;
        }

        std::array<double, 4> sum{};
        std::array<int, 4> cnt{};
        {
            std::size_t col = 0;
            for (const auto& q : survey.questions) {
                if (q.scale.kind != survey::ScaleKind::Likert5) {
                    col += static_cast<std::size_t>(q.feature_count());
                    continue;
                }
                double v = row[col++];
                if (is_absent(v)) continue;
                std::size_t d = dim_index.at(survey.dimension_of.at(q.section));
                sum[d] += v;
                cnt[d] += 1;
            }
        }

        CompositeScores cs;
        double total = 0.0;
        int total_cnt = 0;
        for (std::size_t d = 0; d < 4; ++d) {
            if (cnt[d] > 0) {
                cs.dims[d] = sum[d] / cnt[d];
                total += sum[d];
                total_cnt += cnt[d];
            }
        }
        if (total_cnt > 0) cs.overall = total / total_cnt;

        ds.features.push_back(std::move(row));
        ds.composites.push_back(cs);
        ds.labels.push_back(score_to_label(cs.overall));
        ds.org_index.push_back(rec.org_id);
        ds.respondent_index.push_back(rec.respondent_id);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct DatasetSplit {
    std::vector<int> train_rows;
    std::vector<int> test_rows;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

// Deterministic stratified holdout. Per-class test counts start from the
// largest-remainder apportionment of round(n * test_fraction) across classes,
// so class proportions in test match the full data within one row per class.
inline DatasetSplit stratified_split(const std::vector<int>& labels, double test_fraction,
                                     std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw data_error("BadFraction", "test_fraction must be in (0,1)");
    const int n = static_cast<int>(labels.size());
    if (n < 2) throw data_error("EmptyDataset", "need at least 2 rows to split");

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

    DatasetSplit out;
    out.seed = seed;

    long target = std::lround(test_fraction * n);
    if (target < 1) target = 1;
    if (target >= n) target = n - 1;

    struct Alloc {
        int cls;
        int count;
        int take;
        double remainder;
    };
    std::vector<Alloc> allocs;
    long assigned = 0;
    for (const auto& [cls, rows] : by_class) {
        if (rows.size() == 1) {
            out.warnings.push_back("DegenerateClass: class " + std::to_string(cls) +
                                   " has a single row; kept in train");
            allocs.push_back({cls, 1, 0, -1.0});
            continue;
        }
        double ideal = test_fraction * static_cast<double>(rows.size());
        int base = static_cast<int>(std::floor(ideal));
        if (base >= static_cast<int>(rows.size())) base = static_cast<int>(rows.size()) - 1;
        allocs.push_back({cls, static_cast<int>(rows.size()), base, ideal - base});
        assigned += base;
    }
    // Hand out the remaining test slots by largest remainder, lowest class on ties.
    std::vector<std::size_t> order(allocs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return allocs[a].remainder > allocs[b].remainder;
    });
    for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
        Alloc& a = allocs[order[i]];
        if (a.remainder < 0.0) continue;  // degenerate class
        if (a.take + 1 < a.count) {
            ++a.take;
            ++assigned;
        }
    }
    // If rounding overshot, trim from smallest remainders.
    for (std::size_t i = order.size(); assigned > target && i-- > 0;) {
        Alloc& a = allocs[order[i]];
        if (a.take > 0) {
            --a.take;
            --assigned;
        }
    }

    Rng rng(seed);
    for (const auto& a : allocs) {
        auto rows = by_class.at(a.cls);
        Rng class_rng = rng.derive(static_cast<std::uint64_t>(a.cls));
        class_rng.shuffle(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i < static_cast<std::size_t>(a.take)) out.test_rows.push_back(rows[i]);
            else out.train_rows.push_back(rows[i]);
        }
    }
    std::sort(out.train_rows.begin(), out.train_rows.end());
    std::sort(out.test_rows.begin(), out.test_rows.end());
    return out;
}

// ---------------------------------------------------------------------------
// Descriptive statistics and prevalence
// ---------------------------------------------------------------------------

// Percentage of respondents selecting each option of a MultiSelect question,
// sorted descending by share.
inline std::vector<std::pair<std::string, double>> prevalence(
    const SurveyDefinition& survey, const std::vector<ResponseRecord>& records,
    const std::string& question_id) {
    const auto* q = survey.find(question_id);
    if (!q) throw data_error("UnknownQuestion", question_id);
    if (q->scale.kind != survey::ScaleKind::MultiSelect)
        throw data_error("WrongScale", "prevalence requires a multi-select question");
    std::map<std::string, int> counts;
    for (const auto& opt : q->scale.options) counts[opt] = 0;
    for (const auto& rec : records) {
        auto it = rec.answers.find(question_id);
        if (it == rec.answers.end()) continue;
        std::stringstream ss(it->second);
        std::string part;
        std::set<std::string> seen;
        while (std::getline(ss, part, ';')) {
            part = survey::detail::trim(part);
            if (!part.empty() && counts.count(part) && seen.insert(part).second) ++counts[part];
        }
    }
    std::vector<std::pair<std::string, double>> out;
    const double n = records.empty() ? 1.0 : static_cast<double>(records.size());
    for (const auto& opt : q->scale.options)
        out.emplace_back(opt, 100.0 * counts[opt] / n);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

// Share of respondents whose recoded answer on a scalar question is >= threshold.
inline double share_at_least(const SurveyDefinition& survey,
                             const std::vector<ResponseRecord>& records,
                             const std::string& question_id, double threshold) {
    const auto* q = survey.find(question_id);
    if (!q) throw data_error("UnknownQuestion", question_id);
    if (q->scale.kind == survey::ScaleKind::MultiSelect)
        throw data_error("WrongScale", "share_at_least requires a scalar question");
    int hit = 0, total = 0;
    for (const auto& rec : records) {
        auto it = rec.answers.find(question_id);
        if (it == rec.answers.end() || survey::detail::trim(it->second).empty()) continue;
        double v;
        try {
            v = survey::recode(q->scale, it->second);
        } catch (const Error&) {
            continue;
        }
        ++total;
        if (v >= threshold) ++hit;
    }
    if (total == 0) throw data_error("EmptyDataset", "no usable answers for " + question_id);
    return 100.0 * hit / total;
}

struct ColumnSummary {
    int count = 0;
    double mean = 0, stddev = 0, min = 0, q25 = 0, q50 = 0, q75 = 0, max = 0;
};

inline ColumnSummary summarize(const std::vector<double>& values) {
    if (values.empty()) throw data_error("EmptyDataset", "summarize of empty column");
    ColumnSummary s;
    s.count = static_cast<int>(values.size());
    s.mean = stats::mean(values);
    s.stddev = stats::stddev(values);
    s.min = stats::quantile(values, 0.0);
    s.q25 = stats::quantile(values, 0.25);
    s.q50 = stats::quantile(values, 0.5);
    s.q75 = stats::quantile(values, 0.75);
    s.max = stats::quantile(values, 1.0);
    return s;
}

// Summaries of the four composite dimensions plus the overall score,
// skipping absent entries.
inline std::map<std::string, ColumnSummary> describe(const ScoredDataset& ds) {
    if (ds.size() == 0) throw data_error("EmptyDataset", "describe of empty dataset");
    std::map<std::string, ColumnSummary> out;
    for (std::size_t d = 0; d < dimension_names().size(); ++d) {
        std::vector<double> col;
        for (const auto& cs : ds.composites)
            if (cs.dims[d]) col.push_back(*cs.dims[d]);
        if (!col.empty()) out[dimension_names()[d]] = summarize(col);
    }
    std::vector<double> overall;
    for (const auto& cs : ds.composites)
        if (cs.overall) overall.push_back(*cs.overall);
    if (!overall.empty()) out["overall"] = summarize(overall);
    return out;
}

}  // namespace itxml::prep
