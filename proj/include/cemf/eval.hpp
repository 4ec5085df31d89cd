#pragma once

// Top-n recommendation and Precision@n / Recall@n reports, overall and per
// user-activity group (train-interaction count: low < 20, medium 20-100,
// high > 100).

#include "cemf/core.hpp"
#include "cemf/parallel.hpp"

#include <json.hpp>

#include <map>
#include <queue>
#include <sstream>

namespace cemf {

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
};

/// Ranked top-n lists, one per user. Lists may be shorter than n_max when a
/// user has fewer eligible items.
struct Recommendations {
    std::size_t n_max = 0;
    std::vector<std::vector<std::uint32_t>> items;
};

namespace detail {

struct Scored {
    double score;
    std::uint32_t item;
};

// ranks a before b: higher score first, ties broken by ascending item index
inline bool ranks_before(const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
}

}  // namespace detail

/// The n highest-scoring items for user u among items absent from the user's
/// training row (and from `exclude`, when given). Deterministic: ties broken
/// by ascending item index. Uses a bounded selection heap, not a full sort.
inline std::vector<std::uint32_t> recommend_top_n(const FactorModel& model,
                                                  const InteractionMatrix& train,
                                                  const InteractionMatrix* exclude,
                                                  std::size_t u, std::size_t n) {
    if (u >= train.n_users()) throw std::invalid_argument("recommend_top_n: user index out of range");
    if (n < 1) throw std::invalid_argument("recommend_top_n: n must be >= 1");
    const std::size_t m = train.n_items();
    std::vector<char> blocked(m, 0);
    for (std::uint32_t i : train.row(u).items) blocked[i] = 1;
    if (exclude)
        for (std::uint32_t i : exclude->row(u).items) blocked[i] = 1;

    Vector scores = model.Y.transpose() * model.X.col(u);

    // min-heap on rank: top is the worst currently kept
    auto worse = [](const detail::Scored& a, const detail::Scored& b) {
        return detail::ranks_before(a, b);
    };
    std::priority_queue<detail::Scored, std::vector<detail::Scored>, decltype(worse)> heap(worse);
    for (std::uint32_t i = 0; i < m; ++i) {
        if (blocked[i]) continue;
        detail::Scored cand{scores[i], i};
        if (heap.size() < n) {
            heap.push(cand);
        } else if (detail::ranks_before(cand, heap.top())) {
            heap.pop();
            heap.push(cand);
        }
    }
    std::vector<detail::Scored> kept;
    kept.reserve(heap.size());
    while (!heap.empty()) {
        kept.push_back(heap.top());
        heap.pop();
    }
    std::sort(kept.begin(), kept.end(), detail::ranks_before);
    std::vector<std::uint32_t> out;
    out.reserve(kept.size());
    for (const auto& s : kept) out.push_back(s.item);
    return out;
}

/// Per-user lists for every user with a nonempty row in `for_users` (or for all
/// users when for_users is nullptr); other users get empty lists.
inline Recommendations recommend_all(const FactorModel& model, const InteractionMatrix& train,
                                     const InteractionMatrix* exclude, std::size_t n,
                                     const InteractionMatrix* for_users = nullptr,
                                     unsigned n_threads = 1) {
    Recommendations recs;
    recs.n_max = n;
    recs.items.resize(train.n_users());
    parallel_for(0, train.n_users(), n_threads, [&](std::size_t u) {
        if (for_users && for_users->row(u).size() == 0) return;
        recs.items[u] = recommend_top_n(model, train, exclude, u, n);
    });
    return recs;
}

enum class ActivityGroup { low, medium, high };

inline ActivityGroup activity_group(std::size_t train_interactions) {
    if (train_interactions < 20) return ActivityGroup::low;
    if (train_interactions <= 100) return ActivityGroup::medium;
    return ActivityGroup::high;
}

inline const char* to_string(ActivityGroup g) {
    switch (g) {
        case ActivityGroup::low: return "low";
        case ActivityGroup::medium: return "medium";
        default: return "high";
    }
}

struct GroupStats {
    std::size_t user_count = 0;
    std::map<std::size_t, PrecisionRecall> by_n;  ///< empty (null metrics) when user_count == 0
};

struct EvalReport {
    std::vector<std::size_t> n_values;
    std::map<std::size_t, PrecisionRecall> overall;
    std::map<std::string, GroupStats> groups;
    std::size_t users_evaluated = 0;
    std::size_t users_skipped = 0;
};

namespace detail {

// hits in the length-n prefix of the user's list, for each requested n
inline void prefix_hits(const std::vector<std::uint32_t>& list, InteractionMatrix::RowView truth,
                        const std::vector<std::size_t>& n_values, std::vector<std::size_t>& out) {
    out.assign(n_values.size(), 0);
    std::size_t hits = 0, pos = 0;
    for (std::size_t v = 0; v < n_values.size(); ++v) {
        std::size_t n = n_values[v];
        for (; pos < std::min(n, list.size()); ++pos)
            if (std::binary_search(truth.items.begin(), truth.items.end(), list[pos])) ++hits;
        out[v] = hits;
    }
}

}  // namespace detail

/// Mean Precision@n and Recall@n over users with nonempty ground truth; users
/// with an empty test row are skipped and counted. The n_values must be ascending.
inline EvalReport precision_recall_at_n(const Recommendations& recs, const InteractionMatrix& test,
                                        std::vector<std::size_t> n_values) {
    if (test.nnz() == 0) throw EmptyDatasetError("precision_recall_at_n: test matrix is empty");
    if (n_values.empty()) throw std::invalid_argument("precision_recall_at_n: no n values given");
    if (!std::is_sorted(n_values.begin(), n_values.end()))
        std::sort(n_values.begin(), n_values.end());
    if (n_values.back() > recs.n_max)
        throw std::invalid_argument("precision_recall_at_n: n exceeds recommendation depth");

    EvalReport rep;
    rep.n_values = n_values;
    std::vector<double> prec(n_values.size(), 0.0), rec(n_values.size(), 0.0);
    std::vector<std::size_t> hits;
    for (std::size_t u = 0; u < test.n_users(); ++u) {
        auto truth = test.row(u);
        if (truth.size() == 0) {
            ++rep.users_skipped;
            continue;
        }
        ++rep.users_evaluated;
        detail::prefix_hits(recs.items[u], truth, n_values, hits);
        for (std::size_t v = 0; v < n_values.size(); ++v) {
            prec[v] += static_cast<double>(hits[v]) / static_cast<double>(n_values[v]);
            rec[v] += static_cast<double>(hits[v]) / static_cast<double>(truth.size());
        }
    }
    for (std::size_t v = 0; v < n_values.size(); ++v) {
        double denom = rep.users_evaluated > 0 ? static_cast<double>(rep.users_evaluated) : 1.0;
        rep.overall[n_values[v]] = {prec[v] / denom, rec[v] / denom};
    }
    return rep;
}

/// Same metrics restricted to the low/medium/high activity groups for one n.
inline std::map<std::string, GroupStats> group_report(const Recommendations& recs,
                                                      const InteractionMatrix& train,
                                                      const InteractionMatrix& test,
                                                      std::size_t n) {
    std::map<std::string, GroupStats> groups;
    double prec[3] = {0, 0, 0}, rec[3] = {0, 0, 0};
    std::size_t count[3] = {0, 0, 0};
    std::vector<std::size_t> hits;
    const std::vector<std::size_t> ns{n};
    for (std::size_t u = 0; u < test.n_users(); ++u) {
        auto truth = test.row(u);
        if (truth.size() == 0) continue;
        auto g = static_cast<std::size_t>(activity_group(train.row(u).size()));
        detail::prefix_hits(recs.items[u], truth, ns, hits);
        prec[g] += static_cast<double>(hits[0]) / static_cast<double>(n);
        rec[g] += static_cast<double>(hits[0]) / static_cast<double>(truth.size());
        ++count[g];
    }
    for (auto g : {ActivityGroup::low, ActivityGroup::medium, ActivityGroup::high}) {
        auto idx = static_cast<std::size_t>(g);
        GroupStats stats;
        stats.user_count = count[idx];
        if (count[idx] > 0)
            stats.by_n[n] = {prec[idx] / static_cast<double>(count[idx]),
                             rec[idx] / static_cast<double>(count[idx])};
        groups[to_string(g)] = std::move(stats);
    }
    return groups;
}

/// Overall report plus the per-group breakdown for every n.
inline EvalReport evaluate_report(const Recommendations& recs, const InteractionMatrix& train,
                                  const InteractionMatrix& test, const std::vector<std::size_t>& n_values) {
    EvalReport rep = precision_recall_at_n(recs, test, n_values);
    for (std::size_t n : rep.n_values) {
        auto by_group = group_report(recs, train, test, n);
        for (auto& [name, stats] : by_group) {
            GroupStats& merged = rep.groups[name];
            merged.user_count = stats.user_count;
            if (!stats.by_n.empty()) merged.by_n[n] = stats.by_n[n];
        }
    }
    return rep;
}

inline nlohmann::json to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["n_values"] = rep.n_values;
    j["users_evaluated"] = rep.users_evaluated;
    j["users_skipped"] = rep.users_skipped;
    nlohmann::json overall = nlohmann::json::array();
    for (std::size_t n : rep.n_values)
        overall.push_back({{"n", n},
                           {"precision", rep.overall.at(n).precision},
                           {"recall", rep.overall.at(n).recall}});
    j["overall"] = std::move(overall);
    nlohmann::json groups;
    for (const auto& [name, stats] : rep.groups) {
        nlohmann::json metrics = nlohmann::json::array();
        for (std::size_t n : rep.n_values) {
            auto it = stats.by_n.find(n);
            if (it == stats.by_n.end())
                metrics.push_back({{"n", n}, {"precision", nullptr}, {"recall", nullptr}});
            else
                metrics.push_back({{"n", n},
                                   {"precision", it->second.precision},
                                   {"recall", it->second.recall}});
        }
        groups[name] = {{"users", stats.user_count}, {"metrics", std::move(metrics)}};
    }
    j["groups"] = std::move(groups);
    return j;
}

/// One `group,n,metric,value` row per metric; empty value for null group metrics.
inline std::string to_csv(const EvalReport& rep) {
    std::ostringstream out;
    out << "group,n,metric,value\n";
    auto emit = [&](const std::string& group, std::size_t n, const char* metric,
                    const PrecisionRecall* pr) {
        out << group << ',' << n << ',' << metric << ',';
        if (pr) out << detail::format_double(metric[0] == 'p' ? pr->precision : pr->recall);
        out << '\n';
    };
    for (std::size_t n : rep.n_values) {
        const PrecisionRecall& pr = rep.overall.at(n);
        emit("overall", n, "precision", &pr);
        emit("overall", n, "recall", &pr);
    }
    for (const char* name : {"low", "medium", "high"}) {
        auto git = rep.groups.find(name);
        if (git == rep.groups.end()) continue;
        for (std::size_t n : rep.n_values) {
            auto it = git->second.by_n.find(n);
            const PrecisionRecall* pr = it == git->second.by_n.end() ? nullptr : &it->second;
            emit(name, n, "precision", pr);
            emit(name, n, "recall", pr);
        }
    }
    return out.str();
}

}  // namespace cemf
