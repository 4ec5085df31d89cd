#pragma once

// Core containers shared by the whole toolkit: the sparse user-item
// interaction matrix, model hyperparameters, dense factor matrices and the
// string-key <-> dense-index maps used when loading raw datasets.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cemf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base error. `kind()` is a stable machine-readable tag used by the CLI
/// when emitting error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& msg)
        : Error("parse_error", file + ":" + std::to_string(line) + ": " + msg),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class EmptyDatasetError : public Error {
public:
    explicit EmptyDatasetError(const std::string& msg) : Error("empty_dataset", msg) {}
};

class SolverError : public Error {
public:
    explicit SolverError(const std::string& msg) : Error("solver_error", msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io_error", msg) {}
};

/// Confidence weight attached to an observed interaction count.
inline double confidence(double r_ui, double alpha) {
    return 1.0 + alpha * r_ui;
}

/// Hyperparameters of the factorization models.
struct Hyperparams {
    std::size_t d = 30;          ///< factor dimensionality
    double alpha = 40.0;         ///< confidence slope
    double lambda = 0.01;        ///< L2 regularization weight
    std::size_t k = 1;           ///< SPPMI shift (number of negative samples)
    std::size_t n_iterations = 20;
    double init_scale = 0.01;    ///< stddev of the Gaussian factor init; 0 means all-zero init
    std::uint64_t seed = 0;

    void validate() const {
        if (d < 1) throw std::invalid_argument("hyperparams: d must be >= 1");
        if (k < 1) throw std::invalid_argument("hyperparams: k must be >= 1");
        if (n_iterations < 1) throw std::invalid_argument("hyperparams: n_iterations must be >= 1");
        if (alpha < 0.0) throw std::invalid_argument("hyperparams: alpha must be >= 0");
        if (lambda < 0.0) throw std::invalid_argument("hyperparams: lambda must be >= 0");
        if (init_scale < 0.0) throw std::invalid_argument("hyperparams: init_scale must be >= 0");
    }
};

namespace detail {

// %.17g round-trips any double and prints integral values without a point.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::uint64_t parse_u64(std::string_view tok, const std::string& file, std::size_t line) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError(file, line, "expected unsigned integer, got '" + std::string(tok) + "'");
    return v;
}

inline double parse_double(std::string_view tok, const std::string& file, std::size_t line) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError(file, line, "expected number, got '" + std::string(tok) + "'");
    return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string_view strip_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

// splitmix64; used to derive independent per-unit RNG streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

struct Entry {
    std::uint32_t user;
    std::uint32_t item;
    double count;
};

/// Sparse user-item matrix of positive interaction counts r_ui with
/// both by-user (row) and by-item (column) access. Immutable once built.
/// The binary preference p_ui is implied: 1 where an entry exists, 0 elsewhere.
class InteractionMatrix {
public:
    struct RowView {
        std::span<const std::uint32_t> items;
        std::span<const double> counts;
        std::size_t size() const { return items.size(); }
    };
    struct ColView {
        std::span<const std::uint32_t> users;
        std::span<const double> counts;
        std::size_t size() const { return users.size(); }
    };

    InteractionMatrix(std::size_t n_users, std::size_t n_items, std::vector<Entry> entries)
        : n_users_(n_users), n_items_(n_items) {
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return a.user != b.user ? a.user < b.user : a.item < b.item;
        });
        for (std::size_t e = 0; e < entries.size(); ++e) {
            const Entry& en = entries[e];
            if (en.user >= n_users_)
                throw std::invalid_argument("interaction entry: user index " +
                                            std::to_string(en.user) + " out of range");
            if (en.item >= n_items_)
                throw std::invalid_argument("interaction entry: item index " +
                                            std::to_string(en.item) + " out of range");
            if (!(en.count > 0.0) || !std::isfinite(en.count))
                throw std::invalid_argument("interaction entry (" + std::to_string(en.user) + "," +
                                            std::to_string(en.item) + "): count must be finite and > 0");
            if (e > 0 && entries[e - 1].user == en.user && entries[e - 1].item == en.item)
                throw std::invalid_argument("duplicate interaction entry (" +
                                            std::to_string(en.user) + "," + std::to_string(en.item) + ")");
        }

        row_ptr_.assign(n_users_ + 1, 0);
        col_items_.resize(entries.size());
        row_counts_.resize(entries.size());
        for (const Entry& en : entries) ++row_ptr_[en.user + 1];
        for (std::size_t u = 0; u < n_users_; ++u) row_ptr_[u + 1] += row_ptr_[u];
        for (std::size_t e = 0; e < entries.size(); ++e) {
            col_items_[e] = entries[e].item;
            row_counts_[e] = entries[e].count;
        }

        // column view (CSC), users ascending within each item
        col_ptr_.assign(n_items_ + 1, 0);
        row_users_.resize(entries.size());
        col_counts_.resize(entries.size());
        for (const Entry& en : entries) ++col_ptr_[en.item + 1];
        for (std::size_t i = 0; i < n_items_; ++i) col_ptr_[i + 1] += col_ptr_[i];
        std::vector<std::size_t> next(col_ptr_.begin(), col_ptr_.end() - 1);
        for (const Entry& en : entries) {
            std::size_t slot = next[en.item]++;
            row_users_[slot] = en.user;
            col_counts_[slot] = en.count;
        }
    }

    std::size_t n_users() const { return n_users_; }
    std::size_t n_items() const { return n_items_; }
    std::size_t nnz() const { return col_items_.size(); }

    RowView row(std::size_t u) const {
        std::size_t b = row_ptr_[u], e = row_ptr_[u + 1];
        return {std::span(col_items_).subspan(b, e - b), std::span(row_counts_).subspan(b, e - b)};
    }

    ColView col(std::size_t i) const {
        std::size_t b = col_ptr_[i], e = col_ptr_[i + 1];
        return {std::span(row_users_).subspan(b, e - b), std::span(col_counts_).subspan(b, e - b)};
    }

    bool contains(std::size_t u, std::size_t i) const {
        RowView r = row(u);
        return std::binary_search(r.items.begin(), r.items.end(), static_cast<std::uint32_t>(i));
    }

    template <typename Fn>  // fn(user, item, count), user-major ascending order
    void for_each_entry(Fn&& fn) const {
        for (std::size_t u = 0; u < n_users_; ++u) {
            RowView r = row(u);
            for (std::size_t e = 0; e < r.size(); ++e) fn(static_cast<std::uint32_t>(u), r.items[e], r.counts[e]);
        }
    }

    double sparsity_percent() const {
        double cells = static_cast<double>(n_users_) * static_cast<double>(n_items_);
        if (cells == 0.0) return 100.0;
        return 100.0 * (1.0 - static_cast<double>(nnz()) / cells);
    }

    /// Text triplet format: header `N M NNZ`, then one `user<TAB>item<TAB>count`
    /// line per entry, user-major. Counts round-trip bit-exactly.
    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path.string());
        out << n_users_ << ' ' << n_items_ << ' ' << nnz() << '\n';
        for_each_entry([&](std::uint32_t u, std::uint32_t i, double v) {
            out << u << '\t' << i << '\t' << detail::format_double(v) << '\n';
        });
        if (!out) throw IoError("write failed: " + path.string());
    }

    static InteractionMatrix load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open: " + path.string());
        const std::string name = path.string();
        std::string line;
        if (!std::getline(in, line)) throw ParseError(name, 1, "missing header line 'N M NNZ'");
        auto head = detail::split(detail::strip_cr(line), ' ');
        if (head.size() != 3) throw ParseError(name, 1, "header must be 'N M NNZ'");
        std::size_t n = detail::parse_u64(head[0], name, 1);
        std::size_t m = detail::parse_u64(head[1], name, 1);
        std::size_t nnz = detail::parse_u64(head[2], name, 1);
        std::vector<Entry> entries;
        entries.reserve(nnz);
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            std::string_view sv = detail::strip_cr(line);
            if (sv.empty()) continue;
            auto tok = detail::split(sv, '\t');
            if (tok.size() != 3)
                throw ParseError(name, lineno, "expected 'user<TAB>item<TAB>count'");
            entries.push_back(Entry{
                static_cast<std::uint32_t>(detail::parse_u64(tok[0], name, lineno)),
                static_cast<std::uint32_t>(detail::parse_u64(tok[1], name, lineno)),
                detail::parse_double(tok[2], name, lineno)});
        }
        if (entries.size() != nnz)
            throw ParseError(name, lineno, "header announced " + std::to_string(nnz) +
                                               " entries, file has " + std::to_string(entries.size()));
        return InteractionMatrix(n, m, std::move(entries));
    }

private:
    std::size_t n_users_;
    std::size_t n_items_;
    std::vector<std::size_t> row_ptr_;        // N+1
    std::vector<std::uint32_t> col_items_;    // nnz, item index per row entry
    std::vector<double> row_counts_;          // nnz
    std::vector<std::size_t> col_ptr_;        // M+1
    std::vector<std::uint32_t> row_users_;    // nnz, user index per column entry
    std::vector<double> col_counts_;          // nnz
};

/// Dense factor matrices. Columns are per-user / per-item latent vectors.
/// Mutated only by the solver; everything else reads it const.
struct FactorModel {
    Matrix X;  ///< d x N
    Matrix Y;  ///< d x M
    Hyperparams hp;

    std::size_t d() const { return static_cast<std::size_t>(X.rows()); }
    std::size_t n_users() const { return static_cast<std::size_t>(X.cols()); }
    std::size_t n_items() const { return static_cast<std::size_t>(Y.cols()); }
    bool all_finite() const { return X.allFinite() && Y.allFinite(); }
};

/// Dense index assignment in first-seen order, persisted as `index<TAB>key` lines.
class IdMap {
public:
    std::uint32_t add(const std::string& key) {
        auto it = index_.find(key);
        if (it != index_.end()) return it->second;
        auto idx = static_cast<std::uint32_t>(keys_.size());
        index_.emplace(key, idx);
        keys_.push_back(key);
        return idx;
    }

    std::optional<std::uint32_t> find(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& key(std::size_t idx) const { return keys_.at(idx); }
    std::size_t size() const { return keys_.size(); }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path.string());
        for (std::size_t i = 0; i < keys_.size(); ++i) out << i << '\t' << keys_[i] << '\n';
        if (!out) throw IoError("write failed: " + path.string());
    }

    static IdMap load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open: " + path.string());
        const std::string name = path.string();
        IdMap map;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string_view sv = detail::strip_cr(line);
            if (sv.empty()) continue;
            auto tok = detail::split(sv, '\t');
            if (tok.size() != 2) throw ParseError(name, lineno, "expected 'index<TAB>key'");
            std::uint64_t idx = detail::parse_u64(tok[0], name, lineno);
            if (idx != map.size())
                throw ParseError(name, lineno, "indices must be dense and ascending");
            map.add(std::string(tok[1]));
        }
        return map;
    }

private:
    std::vector<std::string> keys_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

}  // namespace cemf
