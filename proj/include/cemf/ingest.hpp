#pragma once

// Raw dataset loading (ratings, play counts, retail transactions), activity
// filtering and seeded per-user train/validation/test splitting.

#include "cemf/core.hpp"

#include <cctype>
#include <random>
#include <unordered_set>

namespace cemf {

enum class SourceKind { ratings, play_counts, transactions };

struct RawEvent {
    std::string user;
    std::string item;
    double value = 0.0;
    std::int64_t timestamp = -1;  ///< -1 when the source has none
};

struct RawEvents {
    SourceKind kind = SourceKind::ratings;
    std::vector<RawEvent> records;
    std::size_t skipped_records = 0;  ///< malformed-but-tolerated rows (e.g. nonpositive play counts)
};

namespace detail {

// RFC4180-style field splitting; handles quoted fields and doubled quotes.
inline std::vector<std::string> parse_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            in_quotes = true;
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline bool is_numeric_field(std::string_view s) {
    if (s.empty()) return false;
    double v;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc{} && p == s.data() + s.size();
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace detail

/// MovieLens-style `userId,movieId,rating,timestamp` CSV (header optional).
/// Keeps rows with rating >= rating_threshold; the emitted value is 1.
inline RawEvents load_movielens(const std::filesystem::path& path, double rating_threshold) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    const std::string name = path.string();
    RawEvents events;
    events.kind = SourceKind::ratings;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = detail::strip_cr(line);
        if (sv.empty()) continue;
        auto fields = detail::parse_csv_line(sv);
        if (lineno == 1 && !fields.empty() && !detail::is_numeric_field(fields[0])) continue;  // header
        if (fields.size() < 3)
            throw ParseError(name, lineno, "expected 'userId,movieId,rating[,timestamp]'");
        double rating = detail::parse_double(fields[2], name, lineno);
        if (rating < rating_threshold) continue;
        RawEvent ev{fields[0], fields[1], 1.0, -1};
        if (fields.size() >= 4 && detail::is_numeric_field(fields[3]))
            ev.timestamp = static_cast<std::int64_t>(detail::parse_u64(fields[3], name, lineno));
        events.records.push_back(std::move(ev));
    }
    if (events.records.empty())
        throw EmptyDatasetError(name + ": no ratings at or above threshold " +
                                detail::format_double(rating_threshold));
    return events;
}

/// TasteProfile-style `user<TAB>song<TAB>count` triplets. Rows with a
/// nonpositive count are rejected and tallied in skipped_records.
inline RawEvents load_play_counts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    const std::string name = path.string();
    RawEvents events;
    events.kind = SourceKind::play_counts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = detail::strip_cr(line);
        if (sv.empty()) continue;
        auto tok = detail::split(sv, '\t');
        if (tok.size() != 3) throw ParseError(name, lineno, "expected 'user<TAB>song<TAB>count'");
        double count = detail::parse_double(tok[2], name, lineno);
        if (count <= 0.0) {
            ++events.skipped_records;
            continue;
        }
        events.records.push_back({std::string(tok[0]), std::string(tok[1]), count, -1});
    }
    if (events.records.empty()) throw EmptyDatasetError(name + ": no play-count records");
    return events;
}

/// UCI OnlineRetail-style invoice-line CSV. Needs a header naming InvoiceNo,
/// StockCode, Quantity and CustomerID. Rows with an empty CustomerID or a
/// nonpositive Quantity (returns, cancellations) are dropped; the remaining
/// lines aggregate to one record per (customer, stock code) whose value is
/// the number of distinct invoices containing that pair.
inline RawEvents load_transactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    const std::string name = path.string();
    std::string line;
    if (!std::getline(in, line)) throw EmptyDatasetError(name + ": empty file");
    auto header = detail::parse_csv_line(detail::strip_cr(line));
    std::size_t col_invoice = header.size(), col_stock = header.size(), col_qty = header.size(),
                col_customer = header.size();
    for (std::size_t c = 0; c < header.size(); ++c) {
        std::string h = detail::lower(header[c]);
        if (h == "invoiceno" || h == "invoice") col_invoice = c;
        else if (h == "stockcode") col_stock = c;
        else if (h == "quantity") col_qty = c;
        else if (h == "customerid" || h == "customer id") col_customer = c;
    }
    if (col_invoice == header.size() || col_stock == header.size() || col_qty == header.size() ||
        col_customer == header.size())
        throw ParseError(name, 1, "header must name InvoiceNo, StockCode, Quantity and CustomerID");

    std::vector<std::pair<std::string, std::string>> order;  // first-seen (customer, stock)
    std::unordered_map<std::string, std::size_t> pair_index;
    std::vector<double> counts;
    std::unordered_set<std::string> seen;  // invoice \x1f customer \x1f stock
    std::size_t lineno = 1;
    RawEvents events;
    events.kind = SourceKind::transactions;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = detail::strip_cr(line);
        if (sv.empty()) continue;
        auto fields = detail::parse_csv_line(sv);
        if (fields.size() <= std::max({col_invoice, col_stock, col_qty, col_customer}))
            throw ParseError(name, lineno, "too few fields");
        const std::string& customer = fields[col_customer];
        if (customer.empty()) {
            ++events.skipped_records;
            continue;
        }
        double qty = detail::parse_double(fields[col_qty], name, lineno);
        if (qty <= 0.0) {
            ++events.skipped_records;
            continue;
        }
        const std::string& stock = fields[col_stock];
        const std::string& invoice = fields[col_invoice];
        std::string pair_key = customer + '\x1f' + stock;
        if (!seen.insert(invoice + '\x1f' + pair_key).second) continue;  // same invoice, same pair
        auto [it, inserted] = pair_index.emplace(pair_key, order.size());
        if (inserted) {
            order.emplace_back(customer, stock);
            counts.push_back(0.0);
        }
        counts[it->second] += 1.0;
    }
    for (std::size_t e = 0; e < order.size(); ++e)
        events.records.push_back({order[e].first, order[e].second, counts[e], -1});
    if (events.records.empty()) throw EmptyDatasetError(name + ": no usable transaction lines");
    return events;
}

/// Single-pass activity filter: items seen by fewer than min_users_per_item
/// distinct users are removed first, then users left with fewer than
/// min_items_per_user items. Duplicate (user, item) records are merged by
/// summing their values before filtering. The user-removal step may push some
/// items' audiences back below the threshold; no second pass is made.
inline RawEvents filter_activity(const RawEvents& events, std::size_t min_users_per_item,
                                 std::size_t min_items_per_user, bool binarize) {
    struct Agg {
        std::string user;
        std::string item;
        double value;
    };
    std::vector<Agg> agg;  // first-seen order
    std::unordered_map<std::string, std::size_t> index;
    for (const RawEvent& ev : events.records) {
        std::string key = ev.user + '\x1f' + ev.item;
        auto [it, inserted] = index.emplace(std::move(key), agg.size());
        if (inserted)
            agg.push_back({ev.user, ev.item, ev.value});
        else
            agg[it->second].value += ev.value;
    }

    std::unordered_map<std::string, std::size_t> users_per_item;
    for (const Agg& a : agg) ++users_per_item[a.item];

    std::unordered_map<std::string, std::size_t> items_per_user;
    for (const Agg& a : agg)
        if (users_per_item[a.item] >= min_users_per_item) ++items_per_user[a.user];

    RawEvents out;
    out.kind = events.kind;
    for (const Agg& a : agg) {
        if (users_per_item[a.item] < min_users_per_item) continue;
        if (items_per_user[a.user] < min_items_per_user) continue;
        out.records.push_back({a.user, a.item, binarize ? 1.0 : a.value, -1});
    }
    if (out.records.empty())
        throw EmptyDatasetError("filter_activity: no records survive thresholds (" +
                                std::to_string(min_users_per_item) + ", " +
                                std::to_string(min_items_per_user) + ")");
    return out;
}

/// Train/validation/test split sharing one id space.
struct SplitDataset {
    InteractionMatrix train;
    InteractionMatrix validation;
    InteractionMatrix test;
    IdMap users;
    IdMap items;

    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        train.save(dir / "train.tsv");
        validation.save(dir / "val.tsv");
        test.save(dir / "test.tsv");
        users.save(dir / "users.map");
        items.save(dir / "items.map");
    }

    static SplitDataset load(const std::filesystem::path& dir) {
        return SplitDataset{InteractionMatrix::load(dir / "train.tsv"),
                            InteractionMatrix::load(dir / "val.tsv"),
                            InteractionMatrix::load(dir / "test.tsv"),
                            IdMap::load(dir / "users.map"), IdMap::load(dir / "items.map")};
    }
};

/// Per user: ceil(test_frac * |I_u|) interactions drawn uniformly (seeded)
/// into test, a val_frac share of the remainder into validation, the rest
/// into train. A user whose train part would be empty keeps everything in
/// train instead. Dense ids are assigned in first-seen record order.
inline SplitDataset split_per_user(const RawEvents& events, double test_frac, double val_frac,
                                   std::uint64_t seed) {
    if (!(test_frac > 0.0 && test_frac < 1.0))
        throw std::invalid_argument("split_per_user: test_frac must be in (0, 1)");
    if (!(val_frac >= 0.0 && val_frac < 1.0))
        throw std::invalid_argument("split_per_user: val_frac must be in [0, 1)");
    if (events.records.empty()) throw EmptyDatasetError("split_per_user: no records");

    IdMap users, items;
    struct Item {
        std::uint32_t item;
        double value;
    };
    std::vector<std::vector<Item>> by_user;
    {
        // merge duplicates defensively; loaders normally emit unique pairs
        std::unordered_map<std::uint64_t, std::pair<std::size_t, std::size_t>> where;
        for (const RawEvent& ev : events.records) {
            std::uint32_t u = users.add(ev.user);
            std::uint32_t i = items.add(ev.item);
            if (u >= by_user.size()) by_user.resize(u + 1);
            std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | i;
            auto it = where.find(key);
            if (it == where.end()) {
                where.emplace(key, std::make_pair(static_cast<std::size_t>(u), by_user[u].size()));
                by_user[u].push_back({i, ev.value});
            } else {
                by_user[it->second.first][it->second.second].value += ev.value;
            }
        }
    }

    std::vector<Entry> train_e, val_e, test_e;
    std::vector<std::size_t> perm;
    for (std::size_t u = 0; u < by_user.size(); ++u) {
        const auto& list = by_user[u];
        std::size_t n = list.size();
        std::size_t n_test = static_cast<std::size_t>(
            std::ceil(test_frac * static_cast<double>(n)));
        std::size_t n_val = static_cast<std::size_t>(
            std::floor(val_frac * static_cast<double>(n - n_test)));
        if (n - n_test - n_val == 0) {  // keep the user trainable
            n_test = 0;
            n_val = 0;
        }
        perm.resize(n);
        for (std::size_t p = 0; p < n; ++p) perm[p] = p;
        std::mt19937_64 rng(detail::mix_seed(seed, u));
        std::shuffle(perm.begin(), perm.end(), rng);
        auto uu = static_cast<std::uint32_t>(u);
        for (std::size_t p = 0; p < n; ++p) {
            const Item& it = list[perm[p]];
            Entry e{uu, it.item, it.value};
            if (p < n_test)
                test_e.push_back(e);
            else if (p < n_test + n_val)
                val_e.push_back(e);
            else
                train_e.push_back(e);
        }
    }

    std::size_t n_users = users.size(), n_items = items.size();
    return SplitDataset{InteractionMatrix(n_users, n_items, std::move(train_e)),
                        InteractionMatrix(n_users, n_items, std::move(val_e)),
                        InteractionMatrix(n_users, n_items, std::move(test_e)),
                        std::move(users), std::move(items)};
}

}  // namespace cemf
