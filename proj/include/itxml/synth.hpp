#pragma once

// Synthetic survey dataset generator: respondents drawn from a ground-truth
// HMM over maturity states, Likert items around the state's dimension means,
// and multi-select / ordinal answers assigned at exact target frequencies.

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "itxml/core.hpp"
#include "itxml/hmm.hpp"
#include "itxml/survey.hpp"

namespace itxml::synth {

struct ScenarioSpec {
    std::string name = "scenario";
    int n_orgs = 3;
    int respondents_per_org = 20;
    hmm::HmmParams true_params;  // dim must match the composite dimension count (4)
    double item_noise_std = 0.5;
    std::uint64_t seed = 42;
    std::string target_regime = "developing-dominant";  // descriptive only
    // Per-option target selection fraction for each multi-select question,
    // and per-label fraction for each ordinal question. Counts are exact:
    // round(fraction * n) respondents get the option, chosen by seeded shuffle.
    std::map<std::string, std::vector<std::pair<std::string, double>>> categorical_freq;

    void check() const {
        if (n_orgs < 1) throw data_error("BadScenario", "n_orgs must be >= 1");
        if (respondents_per_org < 1)
            throw data_error("BadScenario", "respondents_per_org must be >= 1");
        if (item_noise_std < 0.0) throw data_error("BadScenario", "item_noise_std must be >= 0");
        true_params.check();
    }
};

struct SampleResult {
    std::vector<survey::ResponseRecord> records;          // file order
    std::vector<std::vector<int>> true_states;            // per org, per respondent
};

namespace detail {

inline int clamp_round_likert(double v) {
    long r = std::lround(v);
    if (r < 1) r = 1;
    if (r > 5) r = 5;
    return static_cast<int>(r);
}

// Picks exactly round(frac * n) indices out of 0..n-1 by seeded shuffle.
inline std::vector<char> pick_exact(int n, double frac, Rng rng) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    long take = std::lround(frac * n);
    std::vector<char> out(n, 0);
    for (long i = 0; i < take && i < n; ++i) out[idx[i]] = 1;
    return out;
}

}  // namespace detail

inline SampleResult sample_dataset(const survey::SurveyDefinition& def, const ScenarioSpec& spec) {
    spec.check();
    const hmm::HmmParams& p = spec.true_params;
    if (p.dim != static_cast<int>(prep::dimension_names().size()))
        throw data_error("BadScenario", "true_params.dim must equal the composite dimension count");

    std::map<std::string, std::size_t> dim_index;
    for (std::size_t i = 0; i < prep::dimension_names().size(); ++i)
        dim_index[prep::dimension_names()[i]] = i;

    const int n_total = spec.n_orgs * spec.respondents_per_org;
    SampleResult out;
    out.true_states.resize(spec.n_orgs);

    Rng master(spec.seed);

    // State chains and Likert answers, one derived stream per organization.
    for (int org = 0; org < spec.n_orgs; ++org) {
        Rng rng = master.derive(static_cast<std::uint64_t>(org) + 1000);
        int state = -1;
        for (int r = 0; r < spec.respondents_per_org; ++r) {
            // Draw from pi at the first step, from the transition row after.
            const std::vector<double>& dist = state < 0 ? p.pi : p.trans[state];
            double u = rng.uniform01();
            int next = 0;
            double acc = 0.0;
            for (int k = 0; k < p.n_states; ++k) {
                acc += dist[k];
                if (u < acc) {
                    next = k;
                    break;
                }
                next = k;
            }
            state = next;
            out.true_states[org].push_back(state);

            survey::ResponseRecord rec;
            rec.org_id = "SOE" + std::to_string(org);
            {
                std::ostringstream id;
                id << "R" << (r < 10 ? "0" : "") << r;
                rec.respondent_id = id.str();
            }
            rec.row_index = org * spec.respondents_per_org + r;
            for (const auto& q : def.questions) {
                if (q.scale.kind != survey::ScaleKind::Likert5) continue;
                std::size_t d = dim_index.at(def.dimension_of.at(q.section));
                double target = p.means[state][d] + spec.item_noise_std * rng.normal();
                rec.answers[q.id] = std::to_string(detail::clamp_round_likert(target));
            }
            out.records.push_back(std::move(rec));
        }
    }

    // Categorical questions at exact frequencies, independent of the chains.
    std::uint64_t stream = 50000;
    for (const auto& q : def.questions) {
        auto it = spec.categorical_freq.find(q.id);
        if (q.scale.kind == survey::ScaleKind::MultiSelect) {
            std::vector<std::vector<char>> picks;
            if (it != spec.categorical_freq.end()) {
                for (const auto& [option, frac] : it->second) {
                    (void)option;
                    picks.push_back(detail::pick_exact(n_total, frac, master.derive(stream++)));
                }
            }
            for (int i = 0; i < n_total; ++i) {
                std::string joined;
                if (it != spec.categorical_freq.end()) {
                    for (std::size_t o = 0; o < it->second.size(); ++o) {
                        if (!picks[o][i]) continue;
                        if (!joined.empty()) joined += ";";
                        joined += it->second[o].first;
                    }
                }
                out.records[i].answers[q.id] = joined;
            }
        } else if (q.scale.kind == survey::ScaleKind::OrdinalRange ||
                   q.scale.kind == survey::ScaleKind::Count) {
            if (it == spec.categorical_freq.end())
                throw data_error("BadScenario",
                                 "no frequency table for categorical question '" + q.id + "'");
            std::vector<std::string> labels;
            for (const auto& [label, frac] : it->second) {
                long take = std::lround(frac * n_total);
                for (long k = 0; k < take; ++k) labels.push_back(label);
            }
            while (static_cast<int>(labels.size()) < n_total)
                labels.push_back(it->second.back().first);
            labels.resize(n_total);
            Rng rng = master.derive(stream++);
            rng.shuffle(labels);
            for (int i = 0; i < n_total; ++i) out.records[i].answers[q.id] = labels[i];
        }
    }
    return out;
}

// CSV emission in the exact format prep::load_dataset consumes.
inline std::string to_csv(const survey::SurveyDefinition& def,
                          const std::vector<survey::ResponseRecord>& records) {
    std::ostringstream out;
    out << "org_id,respondent_id";
    for (const auto& q : def.questions) out << "," << q.id;
    out << "\n";
    for (const auto& rec : records) {
        out << rec.org_id << "," << rec.respondent_id;
        for (const auto& q : def.questions) {
            auto it = rec.answers.find(q.id);
            out << ",";
            if (it != rec.answers.end()) out << it->second;
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace itxml::synth
