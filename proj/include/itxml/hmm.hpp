#pragma once

// Diagonal-covariance Gaussian HMM: log-space forward-backward, Viterbi,
// multi-sequence Baum-Welch, and organization-level maturity classification.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "itxml/core.hpp"
#include "itxml/dataset.hpp"

namespace itxml::hmm {

using prep::MaturityLabel;

constexpr double kVarianceFloor = 1e-4;

struct HmmParams {
    int n_states = 0;
    int dim = 0;
    std::vector<double> pi;          // [n_states]
    Matrix trans;                    // [n_states x n_states], row-stochastic
    Matrix means;                    // [n_states x dim]
    Matrix variances;                // [n_states x dim], >= kVarianceFloor

    void check() const {
        if (n_states < 1 || dim < 1) throw data_error("BadParams", "n_states and dim must be >= 1");
        auto check_simplex = [](const std::vector<double>& v, const std::string& what) {
            double s = 0.0;
            for (double x : v) {
                if (x < 0.0) throw data_error("BadParams", what + " has a negative entry");
                s += x;
            }
            if (std::fabs(s - 1.0) > 1e-9)
                throw data_error("BadParams", what + " sums to " + std::to_string(s));
        };
        check_simplex(pi, "pi");
        for (int i = 0; i < n_states; ++i) check_simplex(trans[i], "transition row");
        for (int i = 0; i < n_states; ++i)
            for (int d = 0; d < dim; ++d)
                if (variances[i][d] < kVarianceFloor / 2)
                    throw data_error("BadParams", "variance below floor");
    }

    // Mean of the state's emission means across dimensions; drives the
    // state -> maturity-label mapping.
    double overall_mean(int state) const {
        double s = 0.0;
        for (int d = 0; d < dim; ++d) s += means[state][d];
        return s / dim;
    }
};

struct ObservationSequence {
    std::string org_id;
    Matrix obs;  // [T x dim], file order
};

struct DecodedStates {
    std::vector<int> states;   // posterior argmax per step
    Matrix posteriors;         // [T x n_states]
    double log_likelihood = 0.0;
};

namespace detail {

inline double log_gaussian(const std::vector<double>& x, const std::vector<double>& mean,
                           const std::vector<double>& var) {
    constexpr double log2pi = 1.8378770664093454836;
    double s = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        double diff = x[d] - mean[d];
        s += -0.5 * (log2pi + std::log(var[d]) + diff * diff / var[d]);
    }
    return s;
}

// [T x n_states] log emission densities.
inline Matrix log_emissions(const HmmParams& p, const Matrix& obs) {
    Matrix out(obs.size(), std::vector<double>(p.n_states));
    for (std::size_t t = 0; t < obs.size(); ++t) {
        if (static_cast<int>(obs[t].size()) != p.dim)
            throw data_error("DimensionMismatch", "observation dim != model dim");
        bool any_finite = false;
        for (int k = 0; k < p.n_states; ++k) {
            out[t][k] = log_gaussian(obs[t], p.means[k], p.variances[k]);
            if (std::isfinite(out[t][k])) any_finite = true;
        }
        if (!any_finite)
            throw numeric_error("NumericUnderflow",
                                "observation " + std::to_string(t) + " has zero density in every state");
    }
    return out;
}

inline std::vector<double> safe_log(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = v[i] > 0.0 ? std::log(v[i]) : -std::numeric_limits<double>::infinity();
    return out;
}

inline Matrix safe_log(const Matrix& m) {
    Matrix out;
    out.reserve(m.size());
    for (const auto& row : m) out.push_back(safe_log(row));
    return out;
}

}  // namespace detail

// Exact smoothed posteriors and log-likelihood, all in log space.
inline DecodedStates log_forward_backward(const HmmParams& p, const ObservationSequence& seq) {
    p.check();
    const int T = static_cast<int>(seq.obs.size());
    const int N = p.n_states;
    if (T == 0) throw data_error("EmptySequence", "sequence '" + seq.org_id + "' has no observations");

    const Matrix logb = detail::log_emissions(p, seq.obs);
    const auto logpi = detail::safe_log(p.pi);
    const Matrix loga = detail::safe_log(p.trans);

    Matrix alpha(T, std::vector<double>(N));
    for (int k = 0; k < N; ++k) alpha[0][k] = logpi[k] + logb[0][k];
    std::vector<double> work(N);
    for (int t = 1; t < T; ++t)
        for (int k = 0; k < N; ++k) {
            for (int j = 0; j < N; ++j) work[j] = alpha[t - 1][j] + loga[j][k];
            alpha[t][k] = stats::logsumexp(work) + logb[t][k];
        }

    Matrix beta(T, std::vector<double>(N, 0.0));
    for (int t = T - 2; t >= 0; --t)
        for (int k = 0; k < N; ++k) {
            for (int j = 0; j < N; ++j) work[j] = loga[k][j] + logb[t + 1][j] + beta[t + 1][j];
            beta[t][k] = stats::logsumexp(work);
        }

    DecodedStates out;
    out.log_likelihood = stats::logsumexp(alpha[T - 1]);
    if (!std::isfinite(out.log_likelihood))
        throw numeric_error("NumericUnderflow", "non-finite sequence likelihood");

    out.posteriors.assign(T, std::vector<double>(N));
    out.states.assign(T, 0);
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < N; ++k) work[k] = alpha[t][k] + beta[t][k];
        double norm = stats::logsumexp(work);
        int best = 0;
        for (int k = 0; k < N; ++k) {
            out.posteriors[t][k] = std::exp(work[k] - norm);
            if (out.posteriors[t][k] > out.posteriors[t][best]) best = k;  // ties -> lower index
        }
        out.states[t] = best;
    }
    return out;
}

struct ViterbiResult {
    std::vector<int> path;
    double log_probability = 0.0;
};

// Most probable joint state path; ties break toward the lower state index.
inline ViterbiResult viterbi(const HmmParams& p, const ObservationSequence& seq) {
    p.check();
    const int T = static_cast<int>(seq.obs.size());
    const int N = p.n_states;
    if (T == 0) throw data_error("EmptySequence", "sequence '" + seq.org_id + "' has no observations");

    const Matrix logb = detail::log_emissions(p, seq.obs);
    const auto logpi = detail::safe_log(p.pi);
    const Matrix loga = detail::safe_log(p.trans);

    Matrix delta(T, std::vector<double>(N));
    std::vector<std::vector<int>> back(T, std::vector<int>(N, 0));
    for (int k = 0; k < N; ++k) delta[0][k] = logpi[k] + logb[0][k];
    for (int t = 1; t < T; ++t)
        for (int k = 0; k < N; ++k) {
            int arg = 0;
            double best = delta[t - 1][0] + loga[0][k];
            for (int j = 1; j < N; ++j) {
                double cand = delta[t - 1][j] + loga[j][k];
                if (cand > best) {
                    best = cand;
                    arg = j;
                }
            }
            delta[t][k] = best + logb[t][k];
            back[t][k] = arg;
        }

    ViterbiResult out;
    out.path.assign(T, 0);
    int last = 0;
    for (int k = 1; k < N; ++k)
        if (delta[T - 1][k] > delta[T - 1][last]) last = k;
    out.log_probability = delta[T - 1][last];
    out.path[T - 1] = last;
    for (int t = T - 1; t > 0; --t) out.path[t - 1] = back[t][out.path[t]];
    return out;
}

// ---------------------------------------------------------------------------
// Baum-Welch
// ---------------------------------------------------------------------------

struct FitResult {
    HmmParams params;
    std::vector<double> log_likelihoods;  // total log-likelihood per iteration
    std::vector<std::string> warnings;
    bool converged = false;
};

// Quantile-spread initialization: per-dimension 1/6, 3/6, 5/6 quantiles of the
// pooled observations for the means, pooled variance for sigma^2, uniform pi
// and transitions. `jitter_rng` perturbs the means for restarts.
inline HmmParams init_params(const std::vector<ObservationSequence>& seqs, int n_states,
                             Rng* jitter_rng = nullptr) {
    if (seqs.empty()) throw data_error("EmptyDataset", "no sequences to initialize from");
    const int dim = static_cast<int>(seqs[0].obs.at(0).size());
    Matrix pooled_cols(dim);
    for (const auto& s : seqs)
        for (const auto& row : s.obs)
            for (int d = 0; d < dim; ++d) pooled_cols[d].push_back(row[d]);
    if (static_cast<int>(pooled_cols[0].size()) < n_states)
        throw data_error("EmptyDataset", "fewer observations than states");

    HmmParams p;
    p.n_states = n_states;
    p.dim = dim;
    p.pi.assign(n_states, 1.0 / n_states);
    p.trans.assign(n_states, std::vector<double>(n_states, 1.0 / n_states));
    p.means.assign(n_states, std::vector<double>(dim, 0.0));
    p.variances.assign(n_states, std::vector<double>(dim, 0.0));
    for (int d = 0; d < dim; ++d) {
        double var = stats::stddev(pooled_cols[d]);
        var = std::max(var * var, kVarianceFloor);
        for (int k = 0; k < n_states; ++k) {
            double q = (2.0 * k + 1.0) / (2.0 * n_states);
            p.means[k][d] = stats::quantile(pooled_cols[d], q);
            if (jitter_rng) p.means[k][d] += 0.1 * std::sqrt(var) * jitter_rng->normal();
            p.variances[k][d] = var;
        }
    }
    return p;
}

// EM over a set of sequences, each with its own start. Log-likelihood is
// non-decreasing per iteration up to numerical slack.
inline FitResult baum_welch(HmmParams params, const std::vector<ObservationSequence>& seqs,
                            double tol = 1e-6, int max_iter = 500) {
    params.check();
    if (seqs.empty()) throw data_error("EmptyDataset", "baum_welch needs at least one sequence");
    std::size_t total_obs = 0;
    for (const auto& s : seqs) total_obs += s.obs.size();
    if (total_obs < static_cast<std::size_t>(params.n_states))
        throw data_error("EmptyDataset", "fewer observations than states");

    const int N = params.n_states;
    const int D = params.dim;
    FitResult out;

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<double> pi_acc(N, 0.0);
        Matrix xi_acc(N, std::vector<double>(N, 0.0));
        std::vector<double> gamma_acc(N, 0.0);        // over all steps
        std::vector<double> gamma_trans_acc(N, 0.0);  // over steps 0..T-2
        Matrix mean_acc(N, std::vector<double>(D, 0.0));
        Matrix sq_acc(N, std::vector<double>(D, 0.0));
        double total_ll = 0.0;

        for (const auto& seq : seqs) {
            const int T = static_cast<int>(seq.obs.size());
            const Matrix logb = detail::log_emissions(params, seq.obs);
            const auto logpi = detail::safe_log(params.pi);
            const Matrix loga = detail::safe_log(params.trans);

            Matrix alpha(T, std::vector<double>(N)), beta(T, std::vector<double>(N, 0.0));
            std::vector<double> work(N);
            for (int k = 0; k < N; ++k) alpha[0][k] = logpi[k] + logb[0][k];
            for (int t = 1; t < T; ++t)
                for (int k = 0; k < N; ++k) {
                    for (int j = 0; j < N; ++j) work[j] = alpha[t - 1][j] + loga[j][k];
                    alpha[t][k] = stats::logsumexp(work) + logb[t][k];
                }
            for (int t = T - 2; t >= 0; --t)
                for (int k = 0; k < N; ++k) {
                    for (int j = 0; j < N; ++j) work[j] = loga[k][j] + logb[t + 1][j] + beta[t + 1][j];
                    beta[t][k] = stats::logsumexp(work);
                }
            const double ll = stats::logsumexp(alpha[T - 1]);
            if (!std::isfinite(ll)) throw numeric_error("NonFinite", "sequence likelihood is not finite");
            total_ll += ll;

            for (int t = 0; t < T; ++t) {
                for (int k = 0; k < N; ++k) {
                    double g = std::exp(alpha[t][k] + beta[t][k] - ll);
                    if (t == 0) pi_acc[k] += g;
                    gamma_acc[k] += g;
                    if (t < T - 1) gamma_trans_acc[k] += g;
                    for (int d = 0; d < D; ++d) {
                        mean_acc[k][d] += g * seq.obs[t][d];
                        sq_acc[k][d] += g * seq.obs[t][d] * seq.obs[t][d];
                    }
                }
            }
            for (int t = 0; t + 1 < T; ++t)
                for (int j = 0; j < N; ++j)
                    for (int k = 0; k < N; ++k)
                        xi_acc[j][k] +=
                            std::exp(alpha[t][j] + loga[j][k] + logb[t + 1][k] + beta[t + 1][k] - ll);
        }

        out.log_likelihoods.push_back(total_ll);
        if (!std::isfinite(total_ll)) throw numeric_error("NonFinite", "total log-likelihood not finite");

        // M-step
        HmmParams next = params;
        double pi_sum = 0.0;
        for (double v : pi_acc) pi_sum += v;
        for (int k = 0; k < N; ++k) next.pi[k] = pi_acc[k] / pi_sum;

        constexpr double kTinyResponsibility = 1e-10;
        for (int k = 0; k < N; ++k) {
            if (gamma_trans_acc[k] > kTinyResponsibility) {
                double row_sum = 0.0;
                for (int j = 0; j < N; ++j) row_sum += xi_acc[k][j];
                if (row_sum > 0.0)
                    for (int j = 0; j < N; ++j) next.trans[k][j] = xi_acc[k][j] / row_sum;
            }
            if (gamma_acc[k] > kTinyResponsibility) {
                for (int d = 0; d < D; ++d) {
                    double mu = mean_acc[k][d] / gamma_acc[k];
                    double var = sq_acc[k][d] / gamma_acc[k] - mu * mu;
                    next.means[k][d] = mu;
                    next.variances[k][d] = std::max(var, kVarianceFloor);
                    if (var < kVarianceFloor && out.warnings.empty())
                        out.warnings.push_back("EmptyState: variance floored for state " +
                                               std::to_string(k));
                }
            } else {
                out.warnings.push_back("EmptyState: state " + std::to_string(k) +
                                       " received near-zero responsibility");
                for (int d = 0; d < D; ++d)
                    next.variances[k][d] = std::max(next.variances[k][d], kVarianceFloor);
            }
        }
        // Renormalize against accumulated rounding.
        for (int k = 0; k < N; ++k) {
            double s = 0.0;
            for (int j = 0; j < N; ++j) s += next.trans[k][j];
            for (int j = 0; j < N; ++j) next.trans[k][j] /= s;
        }
        {
            double s = 0.0;
            for (double v : next.pi) s += v;
            for (double& v : next.pi) v /= s;
        }
        params = std::move(next);

        if (iter > 0 && total_ll - prev_ll < tol) {
            out.converged = true;
            prev_ll = total_ll;
            break;
        }
        prev_ll = total_ll;
    }
    out.params = std::move(params);
    return out;
}

// Concatenates all sequences into one stream (the vertically-stacked mode).
inline ObservationSequence stack_sequences(const std::vector<ObservationSequence>& seqs) {
    ObservationSequence out;
    out.org_id = "stacked";
    for (const auto& s : seqs)
        out.obs.insert(out.obs.end(), s.obs.begin(), s.obs.end());
    return out;
}

// ---------------------------------------------------------------------------
// State labeling and classification
// ---------------------------------------------------------------------------

struct StateLabelMap {
    std::vector<MaturityLabel> labels;  // indexed by state

    MaturityLabel operator[](int state) const { return labels.at(state); }
};

// Maps each state's overall emission mean through the score bands. If any two
// states collide in one band, states are instead assigned consecutive labels
// in mean order (ties by state index), anchored so labels stay in range.
inline StateLabelMap map_states(const HmmParams& params) {
    const int N = params.n_states;
    if (N > 3) throw data_error("BadParams", "more states than maturity labels");
    std::vector<int> order(N);
    for (int i = 0; i < N; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return params.overall_mean(a) < params.overall_mean(b);
    });

    std::vector<int> desired(N);
    for (int k = 0; k < N; ++k)
        desired[k] = static_cast<int>(prep::score_to_label(params.overall_mean(k)));

    std::set<int> bands(desired.begin(), desired.end());
    StateLabelMap map;
    map.labels.assign(N, MaturityLabel::Basic);
    if (static_cast<int>(bands.size()) == N) {
        for (int k = 0; k < N; ++k) map.labels[k] = static_cast<MaturityLabel>(desired[k]);
    } else {
        int start = std::min(desired[order[0]], 3 - N);
        for (int i = 0; i < N; ++i)
            map.labels[order[i]] = static_cast<MaturityLabel>(start + i);
    }
    return map;
}

struct MaturityClassification {
    std::string org_id;
    MaturityLabel dominant = MaturityLabel::Basic;
    double confidence = 0.0;             // mean of max posterior across steps
    std::vector<int> state_counts;       // decoded-state occupancy
};

// Dominant state by decoded-state count (ties -> lower-maturity label);
// confidence is the mean of the per-step maximum posterior.
inline MaturityClassification classify_org(const std::string& org_id, const DecodedStates& decoded,
                                           const StateLabelMap& map) {
    const int N = static_cast<int>(decoded.posteriors.at(0).size());
    MaturityClassification out;
    out.org_id = org_id;
    out.state_counts.assign(N, 0);
    for (int s : decoded.states) ++out.state_counts[s];

    int best = 0;
    for (int k = 1; k < N; ++k) {
        if (out.state_counts[k] > out.state_counts[best]) {
            best = k;
        } else if (out.state_counts[k] == out.state_counts[best]) {
            if (static_cast<int>(map[k]) < static_cast<int>(map[best])) best = k;
        }
    }
    out.dominant = map[best];

    double acc = 0.0;
    for (const auto& row : decoded.posteriors)
        acc += *std::max_element(row.begin(), row.end());
    out.confidence = acc / static_cast<double>(decoded.posteriors.size());
    return out;
}

struct TransitionReport {
    std::vector<MaturityLabel> order;  // Basic, Developing, Advanced (present labels)
    Matrix matrix;                     // rows/cols in label order
    std::map<std::string, double> persistence;  // label name -> diagonal entry
};

// Transition matrix with rows/columns reordered into maturity-label order.
inline TransitionReport transition_report(const HmmParams& params, const StateLabelMap& map) {
    const int N = params.n_states;
    std::vector<int> state_order(N);
    for (int i = 0; i < N; ++i) state_order[i] = i;
    std::stable_sort(state_order.begin(), state_order.end(), [&](int a, int b) {
        return static_cast<int>(map[a]) < static_cast<int>(map[b]);
    });

    TransitionReport out;
    out.matrix.assign(N, std::vector<double>(N));
    for (int i = 0; i < N; ++i) {
        out.order.push_back(map[state_order[i]]);
        for (int j = 0; j < N; ++j) out.matrix[i][j] = params.trans[state_order[i]][state_order[j]];
        out.persistence[prep::label_name(map[state_order[i]])] = out.matrix[i][i];
    }
    return out;
}

}  // namespace itxml::hmm
