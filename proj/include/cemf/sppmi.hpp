#pragma once

// Item-item co-occurrence statistics and the shifted positive PMI matrix
// built from them. Items co-occur when they appear together in one user's
// interaction list; each unordered pair is drawn once per user.

#include "cemf/core.hpp"

#include <cstdint>
#include <random>
#include <tuple>
#include <unordered_map>

namespace cemf {

namespace detail {

inline std::uint64_t pair_key(std::uint32_t i, std::uint32_t j) {
    return (static_cast<std::uint64_t>(i) << 32) | j;  // requires i < j
}

}  // namespace detail

/// Pair counts #(i,j), item counts #(i) and the multiset size |D| drawn from
/// the training interaction lists. Pairs are unordered and stored once with i < j.
struct CooccurrenceStats {
    struct PairCount {
        std::uint32_t i;
        std::uint32_t j;
        std::int64_t count;
    };

    std::size_t n_items = 0;
    std::vector<PairCount> pair_counts;  // sorted by (i, j), i < j
    std::vector<std::int64_t> item_counts;
    std::int64_t total = 0;  // |D|
};

struct CooccurrenceOptions {
    /// Users with more items than this have their list subsampled before pair
    /// generation (a user with 10^4 items alone yields ~5*10^7 pairs).
    /// Unset means count every list in full.
    std::optional<std::size_t> max_items_per_user;
    std::uint64_t sample_seed = 0;
};

inline CooccurrenceStats count_cooccurrences(const InteractionMatrix& train,
                                             const CooccurrenceOptions& opts = {}) {
    if (train.nnz() == 0) throw EmptyDatasetError("count_cooccurrences: training matrix is empty");

    CooccurrenceStats stats;
    stats.n_items = train.n_items();
    stats.item_counts.assign(train.n_items(), 0);

    std::unordered_map<std::uint64_t, std::int64_t> acc;
    std::vector<std::uint32_t> items;
    for (std::size_t u = 0; u < train.n_users(); ++u) {
        auto row = train.row(u);
        items.assign(row.items.begin(), row.items.end());
        if (opts.max_items_per_user && items.size() > *opts.max_items_per_user) {
            std::mt19937_64 rng(detail::mix_seed(opts.sample_seed, u));
            std::shuffle(items.begin(), items.end(), rng);
            items.resize(*opts.max_items_per_user);
            std::sort(items.begin(), items.end());
        }
        std::size_t n = items.size();
        if (n < 2) continue;
        stats.total += static_cast<std::int64_t>(n * (n - 1) / 2);
        // each item of the list is in n-1 of the user's pairs
        for (std::uint32_t it : items) stats.item_counts[it] += static_cast<std::int64_t>(n - 1);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                ++acc[detail::pair_key(items[a], items[b])];
    }

    stats.pair_counts.reserve(acc.size());
    for (const auto& [key, cnt] : acc)
        stats.pair_counts.push_back({static_cast<std::uint32_t>(key >> 32),
                                     static_cast<std::uint32_t>(key & 0xffffffffULL), cnt});
    std::sort(stats.pair_counts.begin(), stats.pair_counts.end(),
              [](const CooccurrenceStats::PairCount& a, const CooccurrenceStats::PairCount& b) {
                  return a.i != b.i ? a.i < b.i : a.j < b.j;
              });
    return stats;
}

/// Sparse symmetric item-item matrix of strictly positive SPPMI values.
/// Stored as a full adjacency (both directions) for neighbor iteration;
/// no diagonal entries.
class SppmiMatrix {
public:
    struct RowView {
        std::span<const std::uint32_t> neighbors;
        std::span<const double> values;
        std::size_t size() const { return neighbors.size(); }
    };

    SppmiMatrix() = default;

    /// Builds from unordered pairs (i, j, s) with i != j, s > 0, each pair once.
    SppmiMatrix(std::size_t n_items, std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> pairs)
        : n_items_(n_items) {
        for (auto& [i, j, s] : pairs) {
            if (i == j) throw std::invalid_argument("sppmi entry: diagonal (" + std::to_string(i) + ") not allowed");
            if (i >= n_items_ || j >= n_items_)
                throw std::invalid_argument("sppmi entry (" + std::to_string(i) + "," + std::to_string(j) +
                                            "): index out of range");
            if (!(s > 0.0) || !std::isfinite(s))
                throw std::invalid_argument("sppmi entry (" + std::to_string(i) + "," + std::to_string(j) +
                                            "): value must be finite and > 0");
            if (i > j) std::swap(i, j);
        }
        std::sort(pairs.begin(), pairs.end());
        for (std::size_t e = 1; e < pairs.size(); ++e)
            if (std::get<0>(pairs[e]) == std::get<0>(pairs[e - 1]) &&
                std::get<1>(pairs[e]) == std::get<1>(pairs[e - 1]))
                throw std::invalid_argument("duplicate sppmi pair (" + std::to_string(std::get<0>(pairs[e])) +
                                            "," + std::to_string(std::get<1>(pairs[e])) + ")");
        n_pairs_ = pairs.size();

        row_ptr_.assign(n_items_ + 1, 0);
        for (const auto& [i, j, s] : pairs) {
            ++row_ptr_[i + 1];
            ++row_ptr_[j + 1];
        }
        for (std::size_t i = 0; i < n_items_; ++i) row_ptr_[i + 1] += row_ptr_[i];
        neighbors_.resize(2 * n_pairs_);
        values_.resize(2 * n_pairs_);
        std::vector<std::size_t> next(row_ptr_.begin(), row_ptr_.end() - 1);
        for (const auto& [i, j, s] : pairs) {
            neighbors_[next[i]] = j;
            values_[next[i]++] = s;
            neighbors_[next[j]] = i;
            values_[next[j]++] = s;
        }
    }

    std::size_t n_items() const { return n_items_; }
    std::size_t n_pairs() const { return n_pairs_; }
    bool empty() const { return n_pairs_ == 0; }

    RowView row(std::size_t i) const {
        if (i + 1 >= row_ptr_.size()) return {};
        std::size_t b = row_ptr_[i], e = row_ptr_[i + 1];
        return {std::span(neighbors_).subspan(b, e - b), std::span(values_).subspan(b, e - b)};
    }

    template <typename Fn>  // fn(i, j, s) once per stored pair, i < j, ascending
    void for_each_pair(Fn&& fn) const {
        for (std::size_t i = 0; i < n_items_; ++i) {
            RowView r = row(i);
            for (std::size_t e = 0; e < r.size(); ++e)
                if (r.neighbors[e] > i) fn(static_cast<std::uint32_t>(i), r.neighbors[e], r.values[e]);
        }
    }

    /// Symmetric triplet format: header `M NNZ`, then `i<TAB>j<TAB>s_ij` with i < j.
    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path.string());
        out << n_items_ << ' ' << n_pairs_ << '\n';
        for_each_pair([&](std::uint32_t i, std::uint32_t j, double s) {
            out << i << '\t' << j << '\t' << detail::format_double(s) << '\n';
        });
        if (!out) throw IoError("write failed: " + path.string());
    }

    static SppmiMatrix load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open: " + path.string());
        const std::string name = path.string();
        std::string line;
        if (!std::getline(in, line)) throw ParseError(name, 1, "missing header line 'M NNZ'");
        auto head = detail::split(detail::strip_cr(line), ' ');
        if (head.size() != 2) throw ParseError(name, 1, "header must be 'M NNZ'");
        std::size_t m = detail::parse_u64(head[0], name, 1);
        std::size_t nnz = detail::parse_u64(head[1], name, 1);
        std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> pairs;
        pairs.reserve(nnz);
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            std::string_view sv = detail::strip_cr(line);
            if (sv.empty()) continue;
            auto tok = detail::split(sv, '\t');
            if (tok.size() != 3) throw ParseError(name, lineno, "expected 'i<TAB>j<TAB>s'");
            pairs.emplace_back(static_cast<std::uint32_t>(detail::parse_u64(tok[0], name, lineno)),
                               static_cast<std::uint32_t>(detail::parse_u64(tok[1], name, lineno)),
                               detail::parse_double(tok[2], name, lineno));
        }
        if (pairs.size() != nnz)
            throw ParseError(name, lineno, "header announced " + std::to_string(nnz) +
                                               " pairs, file has " + std::to_string(pairs.size()));
        return SppmiMatrix(m, std::move(pairs));
    }

private:
    std::size_t n_items_ = 0;
    std::size_t n_pairs_ = 0;
    std::vector<std::size_t> row_ptr_;
    std::vector<std::uint32_t> neighbors_;
    std::vector<double> values_;
};

/// PMI(i,j) - ln k, clipped at zero (entries <= 0 are dropped). Natural log.
inline SppmiMatrix build_sppmi(const CooccurrenceStats& stats, std::size_t k) {
    if (k < 1) throw std::invalid_argument("build_sppmi: k must be a positive integer");
    if (stats.total <= 0) throw EmptyDatasetError("build_sppmi: no co-occurring pairs");
    const double log_k = std::log(static_cast<double>(k));
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> pairs;
    for (const auto& pc : stats.pair_counts) {
        double num = static_cast<double>(pc.count) * static_cast<double>(stats.total);
        double den = static_cast<double>(stats.item_counts[pc.i]) *
                     static_cast<double>(stats.item_counts[pc.j]);
        double v = std::log(num / den) - log_k;
        if (v > 0.0) pairs.emplace_back(pc.i, pc.j, v);
    }
    return SppmiMatrix(stats.n_items, std::move(pairs));
}

/// Off-diagonal sparsity of S as a percentage.
inline double sppmi_sparsity(const SppmiMatrix& s) {
    std::size_t m = s.n_items();
    if (m < 2) throw std::invalid_argument("sppmi_sparsity: undefined for fewer than 2 items");
    double cells = static_cast<double>(m) * static_cast<double>(m - 1);
    return 100.0 * (1.0 - 2.0 * static_cast<double>(s.n_pairs()) / cells);
}

}  // namespace cemf
