// Acceptance suite: one line per criterion, PASS/FAIL, nonzero exit on any
// failure. Each check is self-contained and uses independent oracles where
// the criterion demands exactness.

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "itxml/pipeline.hpp"
#include "itxml/synth.hpp"

using namespace itxml;

namespace {

int failures = 0;

void report(int number, const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << number << ". " << name;
    if (!detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << "\n";
    if (!ok) ++failures;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("FileUnreadable", "cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

survey::SurveyDefinition& bundled() {
    static survey::SurveyDefinition def =
        survey::load_survey_definition(ITXML_DATA_DIR "/survey_definition.txt");
    return def;
}

double gauss(const std::vector<double>& x, const std::vector<double>& mu,
             const std::vector<double>& var) {
    double p = 1.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        double diff = x[d] - mu[d];
        p *= std::exp(-0.5 * diff * diff / var[d]) / std::sqrt(2.0 * M_PI * var[d]);
    }
    return p;
}

hmm::HmmParams random_params(Rng& rng, int n, int dim) {
    hmm::HmmParams p;
    p.n_states = n;
    p.dim = dim;
    auto simplex = [&](int k) {
        std::vector<double> v(k);
        double s = 0.0;
        for (double& x : v) {
            x = 0.1 + rng.uniform01();
            s += x;
        }
        for (double& x : v) x /= s;
        return v;
    };
    p.pi = simplex(n);
    for (int i = 0; i < n; ++i) p.trans.push_back(simplex(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> mu(dim), var(dim);
        for (int d = 0; d < dim; ++d) {
            mu[d] = 4.0 * rng.uniform01() - 2.0;
            var[d] = 0.2 + rng.uniform01();
        }
        p.means.push_back(mu);
        p.variances.push_back(var);
    }
    return p;
}

Matrix random_obs(Rng& rng, int t, int dim) {
    Matrix obs(t, std::vector<double>(dim));
    for (auto& row : obs)
        for (double& v : row) v = 3.0 * rng.uniform01() - 1.5;
    return obs;
}

Matrix sample_seq(Rng& rng, const hmm::HmmParams& p, int t) {
    Matrix obs;
    int state = -1;
    for (int i = 0; i < t; ++i) {
        const auto& dist = state < 0 ? p.pi : p.trans[state];
        double u = rng.uniform01(), acc = 0.0;
        state = p.n_states - 1;
        for (int k = 0; k < p.n_states; ++k) {
            acc += dist[k];
            if (u < acc) {
                state = k;
                break;
            }
        }
        std::vector<double> row(p.dim);
        for (int d = 0; d < p.dim; ++d)
            row[d] = p.means[state][d] + std::sqrt(p.variances[state][d]) * rng.normal();
        obs.push_back(row);
    }
    return obs;
}

// XOR fixture: 400 rows, 2 informative features + 8 noise.
void make_xor(Rng& rng, Matrix* x, std::vector<int>* y) {
    for (int i = 0; i < 400; ++i) {
        int a = static_cast<int>(rng.below(2)), b = static_cast<int>(rng.below(2));
        std::vector<double> row(10);
        row[0] = 3.0 * a + 0.4 * rng.normal();
        row[1] = 3.0 * b + 0.4 * rng.normal();
        for (int j = 2; j < 10; ++j) row[j] = rng.normal();
        x->push_back(row);
        y->push_back(a ^ b);
    }
}

struct E2E {
    pipeline::AssessmentResult res;
    Matrix x;           // features incl. hmm_state, as the pipeline saw them
    Matrix background;  // the pipeline's SHAP background
};

E2E& e2e() {
    static E2E cache = [] {
        auto& def = bundled();
        std::string csv = slurp(ITXML_DATA_DIR "/fixtures/developing_dominant.csv");
        std::istringstream in(csv);
        auto records = prep::load_dataset(def, in);
        pipeline::Config cfg;
        cfg.run_lime = false;
        E2E out{pipeline::run_assess(def, records, csv, cfg, 42), {}, {}};

        auto ds = prep::compute_composites(def, records);
        std::vector<int> y;
        for (auto l : ds.labels) y.push_back(static_cast<int>(l));
        auto orgseq = pipeline::build_sequences(ds);
        std::vector<int> row_state(ds.size(), -1);
        for (std::size_t o = 0; o < orgseq.seqs.size(); ++o) {
            auto dec = hmm::log_forward_backward(out.res.hmm_params, orgseq.seqs[o]);
            for (std::size_t t = 0; t < orgseq.dataset_rows[o].size(); ++t)
                row_state[orgseq.dataset_rows[o][t]] = dec.states[t];
        }
        out.x = ds.features;
        for (std::size_t i = 0; i < out.x.size(); ++i)
            out.x[i].push_back(static_cast<double>(row_state[i]));
        auto split = prep::stratified_split(y, cfg.test_fraction, 42);
        for (int r : split.train_rows) out.background.push_back(out.x[r]);
        return out;
    }();
    return cache;
}

}  // namespace

int main() {
    std::cout.setf(std::ios::fixed);

    // 1. Recoding fidelity.
    {
        survey::ResponseScale s;
        s.kind = survey::ScaleKind::OrdinalRange;
        s.map.entries = {{"None", 0}, {"1-2", 1.5}, {"3-5", 4}, {"6-10", 8}, {"More than 10", 11}};
        bool ok = survey::recode(s, "None") == 0.0 && survey::recode(s, "1-2") == 1.5 &&
                  survey::recode(s, "3-5") == 4.0 && survey::recode(s, "6-10") == 8.0 &&
                  survey::recode(s, "More than 10") == 11.0;
        // The bundled definition must carry the same map on TP01.
        for (const auto& q : bundled().questions)
            if (q.id == "TP01")
                for (const auto& [label, value] : s.map.entries)
                    ok = ok && survey::recode(q.scale, label) == value;
        report(1, "recoding fidelity (incident midpoint map, zero tolerance)", ok);
    }

    // 2. Threshold labeling.
    {
        using prep::MaturityLabel;
        bool ok = prep::score_to_label(2.49) == MaturityLabel::Basic &&
                  prep::score_to_label(2.5) == MaturityLabel::Developing &&
                  prep::score_to_label(3.5) == MaturityLabel::Developing &&
                  prep::score_to_label(3.51) == MaturityLabel::Advanced &&
                  prep::score_to_label(std::nullopt) == MaturityLabel::Basic;
        report(2, "threshold labeling at 2.5/3.5 with absent -> Basic", ok);
    }

    // 3. Metrics reproduction.
    {
        std::vector<int> yt = {1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2};
        std::vector<int> yp = {1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 2};
        auto m = forest::evaluate(yt, yp).metrics;
        auto near = [](double a, double b) { return std::fabs(a - b) <= 0.005; };
        bool ok = near(m.accuracy, 0.917) && near(m.per_class.at(1).precision, 1.00) &&
                  near(m.per_class.at(1).recall, 0.75) && near(m.per_class.at(1).f1, 0.857) &&
                  near(m.per_class.at(2).precision, 0.889) && near(m.per_class.at(2).recall, 1.00) &&
                  near(m.per_class.at(2).f1, 0.941) && near(m.macro_precision, 0.944) &&
                  near(m.macro_recall, 0.875) && near(m.macro_f1, 0.899) && near(m.kappa, 0.80);
        std::ostringstream d;
        d.precision(3);
        d << std::fixed << "acc " << m.accuracy << ", kappa " << m.kappa;
        report(3, "metrics on confusion [[3,1],[0,8]] within 0.005", ok, d.str());
    }

    // 4. Prevalence reproduction.
    {
        auto& def = bundled();
        std::istringstream in(slurp(ITXML_DATA_DIR "/fixtures/developing_dominant.csv"));
        auto records = prep::load_dataset(def, in);
        auto prev = prep::prevalence(def, records, "TP02");
        std::vector<double> expected = {61.7, 46.7, 45.0, 25.0, 13.3};
        bool ok = prev.size() == expected.size();
        for (std::size_t i = 0; ok && i < prev.size(); ++i)
            ok = std::round(prev[i].second * 10) / 10 == expected[i];
        double no_incident = 100.0 - prep::share_at_least(def, records, "TP01", 1.0);
        ok = ok && std::round(no_incident * 10) / 10 == 46.7;
        report(4, "prevalence (61.7/46.7/45.0/25.0/13.3) and 46.7% no-incident", ok);
    }

    // 5. HMM exactness against exhaustive enumeration.
    {
        Rng rng(1001);
        bool ok = true;
        int checked = 0;
        for (int trial = 0; trial < 200 && ok; ++trial) {
            int n = 2 + static_cast<int>(rng.below(2));
            int t = 2 + static_cast<int>(rng.below(7));
            auto p = random_params(rng, n, 2);
            auto obs = random_obs(rng, t, 2);

            double total = 0.0;
            std::vector<int> best_path;
            double best_lp = -std::numeric_limits<double>::infinity();
            long paths = 1;
            for (int i = 0; i < t; ++i) paths *= n;
            std::vector<int> path(t);
            for (long code = 0; code < paths; ++code) {
                long c = code;
                for (int i = 0; i < t; ++i) {
                    path[i] = static_cast<int>(c % n);
                    c /= n;
                }
                double prob = p.pi[path[0]] * gauss(obs[0], p.means[path[0]], p.variances[path[0]]);
                for (int i = 1; i < t; ++i)
                    prob *= p.trans[path[i - 1]][path[i]] *
                            gauss(obs[i], p.means[path[i]], p.variances[path[i]]);
                total += prob;
                double lp = std::log(prob);
                if (lp > best_lp + 1e-12) {
                    best_lp = lp;
                    best_path = path;
                }
            }
            auto dec = hmm::log_forward_backward(p, {"o", obs});
            auto vit = hmm::viterbi(p, {"o", obs});
            ok = std::fabs(dec.log_likelihood - std::log(total)) <=
                     1e-9 * std::fabs(std::log(total)) &&
                 std::fabs(vit.log_probability - best_lp) <= 1e-9 * std::fabs(best_lp) &&
                 vit.path == best_path;
            ++checked;
        }
        report(5, "forward/Viterbi exact vs path enumeration on 200 random instances", ok,
               std::to_string(checked) + " instances");
    }

    // 6. EM soundness: monotone likelihood, normalized rows and posteriors.
    {
        Rng rng(2002);
        bool ok = true;
        for (int start = 0; start < 50 && ok; ++start) {
            auto truth = random_params(rng, 2 + static_cast<int>(rng.below(2)), 2);
            std::vector<hmm::ObservationSequence> seqs;
            for (int s = 0; s < 2; ++s) seqs.push_back({"o", sample_seq(rng, truth, 25)});
            auto init = random_params(rng, truth.n_states, 2);
            auto fit = hmm::baum_welch(init, seqs, 1e-8, 30);
            for (std::size_t i = 1; i < fit.log_likelihoods.size(); ++i)
                ok = ok && fit.log_likelihoods[i] >= fit.log_likelihoods[i - 1] - 1e-8;
            double ps = 0.0;
            for (double v : fit.params.pi) ps += v;
            ok = ok && std::fabs(ps - 1.0) <= 1e-9;
            for (const auto& row : fit.params.trans) {
                double rs = 0.0;
                for (double v : row) rs += v;
                ok = ok && std::fabs(rs - 1.0) <= 1e-9;
            }
            auto dec = hmm::log_forward_backward(fit.params, seqs[0]);
            for (const auto& row : dec.posteriors) {
                double rs = 0.0;
                for (double v : row) rs += v;
                ok = ok && std::fabs(rs - 1.0) <= 1e-9;
            }
        }
        report(6, "Baum-Welch monotone over 50 random starts; rows/posteriors normalized", ok);
    }

    // 7. Parameter recovery.
    {
        hmm::HmmParams truth;
        truth.n_states = 3;
        truth.dim = 2;
        truth.pi = {0.3, 0.4, 0.3};
        truth.trans = {{0.7, 0.2, 0.1}, {0.15, 0.7, 0.15}, {0.1, 0.2, 0.7}};
        truth.means = {{0.0, 0.0}, {3.0, 3.0}, {6.0, 6.0}};
        truth.variances = {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
        Rng rng(90210);
        std::vector<hmm::ObservationSequence> seqs;
        for (int s = 0; s < 50; ++s) seqs.push_back({"o", sample_seq(rng, truth, 100)});
        auto fit = hmm::baum_welch(hmm::init_params(seqs, 3), seqs, 1e-7, 200);
        std::vector<int> order = {0, 1, 2};
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return fit.params.overall_mean(a) < fit.params.overall_mean(b);
        });
        double trans_err = 0.0, mean_err = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                trans_err = std::max(trans_err,
                                     std::fabs(fit.params.trans[order[i]][order[j]] - truth.trans[i][j]));
        for (int i = 0; i < 3; ++i)
            for (int d = 0; d < 2; ++d)
                mean_err = std::max(mean_err,
                                    std::fabs(fit.params.means[order[i]][d] - truth.means[i][d]));
        bool ok = trans_err < 0.05 && mean_err < 0.15 * std::sqrt(0.5);
        std::ostringstream d;
        d.precision(4);
        d << std::fixed << "trans err " << trans_err << ", mean err " << mean_err;
        report(7, "3-state recovery: transition err < 0.05, mean err < 0.15 sigma", ok, d.str());
    }

    // 8. End-to-end regime match.
    {
        const auto& rep = e2e().res.report;
        bool ok = rep["hmm"]["organizations"].size() == 3;
        double min_conf = 1.0;
        for (const auto& org : rep["hmm"]["organizations"]) {
            ok = ok && org["dominant"] == "Developing";
            min_conf = std::min(min_conf, org["confidence"].get<double>());
        }
        ok = ok && min_conf >= 0.9;
        std::ostringstream d;
        d.precision(3);
        d << std::fixed << "min confidence " << min_conf;
        report(8, "all 3 fixture orgs Developing with confidence >= 0.9", ok, d.str());
    }

    // 9. Forest quality on the XOR fixture.
    {
        Rng rng(3003);
        Matrix x;
        std::vector<int> y;
        make_xor(rng, &x, &y);
        forest::ForestConfig cfg;
        cfg.n_trees = 100;
        auto cv = forest::cross_validate(x, y, 5, cfg, 42);
        auto f = forest::fit_forest(x, y, cfg, 42);
        auto imp = forest::feature_importance(f);
        double min_info = std::min(imp[0], imp[1]);
        double max_noise = 0.0;
        for (int j = 2; j < 10; ++j) max_noise = std::max(max_noise, imp[j]);
        bool ok = cv.mean >= 0.85 && min_info > max_noise;
        std::ostringstream d;
        d.precision(3);
        d << std::fixed << "cv mean " << cv.mean << ", min informative " << min_info
          << " > max noise " << max_noise;
        report(9, "XOR fixture: 5-fold CV >= 0.85; informative features outrank noise", ok, d.str());
    }

    // 10. Shapley exactness.
    {
        Rng rng(4004);
        bool exact = true;
        int n_forests = 0;
        for (int trial = 0; trial < 100 && exact; ++trial) {
            int m = 3 + static_cast<int>(rng.below(8));  // 3..10 features
            Matrix x;
            std::vector<int> y;
            for (int i = 0; i < 30; ++i) {
                std::vector<double> row(m);
                for (double& v : row) v = 4.0 * rng.uniform01();
                x.push_back(row);
                y.push_back(row[0] + row[m - 1] > 4.0 ? 1 : 0);
            }
            if (std::set<int>(y.begin(), y.end()).size() < 2) y[0] = 1 - y[0];
            forest::ForestConfig cfg;
            cfg.n_trees = 5;
            cfg.max_depth = 4;
            auto f = forest::fit_forest(x, y, cfg, rng.next_u64());
            Matrix background(x.begin(), x.begin() + 4);
            std::vector<int> feats(m);
            for (int j = 0; j < m; ++j) feats[j] = j;
            const auto& probe = x[20];
            auto fast = explain::shap_values(f, probe, background);
            for (std::size_t cls = 0; cls < f.class_values.size() && exact; ++cls) {
                auto bb = [&f, cls](const std::vector<double>& pt) {
                    return forest::predict_proba(f, pt)[cls];
                };
                auto slow = explain::brute_force_shapley(bb, probe, background, feats);
                for (int j = 0; j < m; ++j)
                    exact = exact && std::fabs(fast.values[cls][j] - slow[j]) <= 1e-9;
            }
            ++n_forests;
        }

        // Efficiency on the full fixture feature space.
        bool efficient = true;
        {
            const auto& ctx = e2e();
            Matrix background(ctx.background.begin(),
                              ctx.background.begin() + std::min<std::size_t>(20, ctx.background.size()));
            for (int probe = 0; probe < 10; ++probe) {
                const auto& row = ctx.x[probe * 6];
                auto exp = explain::shap_values(ctx.res.forest_model, row, background);
                auto p = forest::predict_proba(ctx.res.forest_model, row);
                for (std::size_t cls = 0; cls < p.size(); ++cls) {
                    double total = exp.base_values[cls];
                    for (double v : exp.values[cls]) total += v;
                    efficient = efficient && std::fabs(total - p[cls]) <= 1e-6;
                }
            }
        }
        report(10, "tree SHAP = brute force (1e-9) on 100 forests; efficiency 1e-6 on fixture",
               exact && efficient, std::to_string(n_forests) + " forests");
    }

    // 11. Explainability consistency.
    {
        // XOR fixture correlation.
        Rng rng(5005);
        Matrix x;
        std::vector<int> y;
        make_xor(rng, &x, &y);
        forest::ForestConfig cfg;
        cfg.n_trees = 60;
        auto f = forest::fit_forest(x, y, cfg, 42);
        Matrix background(x.begin(), x.begin() + 50);
        Matrix sample(x.begin(), x.begin() + 120);
        auto gi = explain::global_shap_importance(f, sample, background, 1);
        double r_xor = explain::importance_correlation(gi.mean_abs_shap, forest::feature_importance(f));

        // End-to-end fixture correlation, as reported by the pipeline.
        double r_e2e = e2e().res.report["explain"]["shap_rf_correlation"].get<double>();

        // Correlation matrix symmetry / unit diagonal.
        auto sm = explain::shap_matrix(f, sample, background, 1);
        auto corr = explain::shap_correlation_matrix(sm, {0, 1, 2, 3, 4});
        bool sym = true;
        for (int i = 0; i < 5; ++i) {
            sym = sym && std::fabs(corr[i][i] - 1.0) <= 1e-9;
            for (int j = 0; j < 5; ++j)
                if (!is_absent(corr[i][j]))
                    sym = sym && std::fabs(corr[i][j] - corr[j][i]) <= 1e-9;
        }
        bool ok = r_xor >= 0.8 && r_e2e >= 0.8 && sym;
        std::ostringstream d;
        d.precision(3);
        d << std::fixed << "r(xor) " << r_xor << ", r(e2e) " << r_e2e;
        report(11, "SHAP-RF correlation >= 0.8 on XOR and end-to-end; matrix symmetric", ok, d.str());
    }

    // 12. LIME fidelity on a known linear model.
    {
        explain::BlackBox linear = [](const std::vector<double>& pt) {
            return 5.0 * pt[0] - 1.0 * pt[1] + 0.5 * pt[2];
        };
        explain::TrainingStats s;
        s.means = {0.0, 0.0, 0.0};
        s.stds = {1.0, 1.0, 1.0};
        int hits = 0;
        for (std::uint64_t seed = 1; seed <= 100; ++seed) {
            auto exp = explain::lime_explain(linear, {0.2, -0.4, 0.1}, s, 200, 0.0, 3, 1e-3, seed);
            if (!exp.weights.empty() && exp.weights[0].first == 0 && exp.weights[0].second > 0.0)
                ++hits;
        }
        report(12, "LIME top feature matches dominant coefficient in >= 95/100 seeds",
               hits >= 95, std::to_string(hits) + "/100");
    }

    // 13. Determinism of the full assessment.
    {
        auto& def = bundled();
        std::string csv = slurp(ITXML_DATA_DIR "/fixtures/developing_dominant.csv");
        pipeline::Config cfg;
        cfg.n_trees = 40;
        cfg.lime_samples = 200;
        std::istringstream in1(csv), in2(csv);
        auto a = pipeline::run_assess(def, prep::load_dataset(def, in1), csv, cfg, 42);
        auto b = pipeline::run_assess(def, prep::load_dataset(def, in2), csv, cfg, 42);
        bool ok = a.report.dump(2) == b.report.dump(2) &&
                  io::to_json(a.forest_model).dump() == io::to_json(b.forest_model).dump() &&
                  io::to_json(a.hmm_params, a.label_map, 42).dump() ==
                      io::to_json(b.hmm_params, b.label_map, 42).dump();
        report(13, "two identical assess runs produce byte-identical artifacts", ok);
    }

    if (failures) {
        std::cout << failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all 13 criteria passed\n";
    return 0;
}
