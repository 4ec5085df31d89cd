#pragma once

// Alternating least squares on the joint objective
//
//   L(X, Y) = sum_{u,i} c_ui (p_ui - x_u.y_i)^2
//           + sum_{i<j, s_ij>0} (s_ij - y_i.y_j)^2
//           + lambda (sum_u |x_u|^2 + sum_i |y_i|^2)
//
// with c_ui = 1 + alpha r_ui and p_ui = [r_ui > 0]. WMF is the special case
// of an empty second term. Unobserved cells are never materialized: the
// c = 1, p = 0 identity lets every per-coordinate system start from the
// d x d Gram matrix of the opposite factor block.

#include "cemf/core.hpp"
#include "cemf/parallel.hpp"
#include "cemf/sppmi.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>

#include <bit>
#include <random>

namespace cemf {

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; big-endian hosts are unsupported");

enum class TrainMode { wmf, cemf };

/// Item sweep order. Gauss-Seidel (in place, ascending index) keeps the
/// per-update monotone descent guarantee; Jacobi solves every item against
/// the previous sweep's Y and parallelizes, without that guarantee.
enum class ItemSweep { gauss_seidel, jacobi };

struct TrainConfig {
    Hyperparams hp;
    TrainMode mode = TrainMode::cemf;
    ItemSweep item_sweep = ItemSweep::gauss_seidel;
    std::optional<double> rel_tolerance;  ///< early stop when the relative loss decrease falls below
    unsigned n_threads = 1;               ///< 0 = hardware concurrency

    void validate() const { hp.validate(); }
};

struct LossBreakdown {
    double interaction_term = 0.0;
    double embedding_term = 0.0;
    double regularization_term = 0.0;
    double total = 0.0;
};

inline const char* to_string(TrainMode mode) {
    return mode == TrainMode::wmf ? "wmf" : "cemf";
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "wmf") return TrainMode::wmf;
    if (s == "cemf") return TrainMode::cemf;
    throw std::invalid_argument("unknown train mode '" + s + "' (expected wmf or cemf)");
}

/// Factors drawn i.i.d. from N(0, init_scale^2), seeded; X is filled before Y,
/// both column-major. init_scale = 0 yields the all-zero model.
inline FactorModel init_model(std::size_t n_users, std::size_t n_items, const Hyperparams& hp) {
    hp.validate();
    if (n_users < 1 || n_items < 1)
        throw std::invalid_argument("init_model: need at least one user and one item");
    FactorModel model;
    model.hp = hp;
    auto d = static_cast<Eigen::Index>(hp.d);
    model.X.resize(d, static_cast<Eigen::Index>(n_users));
    model.Y.resize(d, static_cast<Eigen::Index>(n_items));
    if (hp.init_scale == 0.0) {
        model.X.setZero();
        model.Y.setZero();
        return model;
    }
    std::mt19937_64 rng(hp.seed);
    std::normal_distribution<double> gauss(0.0, hp.init_scale);
    for (Eigen::Index idx = 0; idx < model.X.size(); ++idx) model.X.data()[idx] = gauss(rng);
    for (Eigen::Index idx = 0; idx < model.Y.size(); ++idx) model.Y.data()[idx] = gauss(rng);
    return model;
}

/// F F^T as a full symmetric d x d matrix.
inline Matrix factor_gram(const Matrix& factors) {
    Matrix g = Matrix::Zero(factors.rows(), factors.rows());
    g.selfadjointView<Eigen::Lower>().rankUpdate(factors);
    return g.selfadjointView<Eigen::Lower>();
}

namespace detail {

inline Vector spd_solve(Matrix& a, const Vector& b, const char* what, std::size_t index) {
    Eigen::LLT<Eigen::Ref<Matrix>, Eigen::Lower> llt(a);
    if (llt.info() != Eigen::Success)
        throw SolverError(std::string("singular normal equations for ") + what + " " +
                          std::to_string(index));
    return llt.solve(b);
}

}  // namespace detail

/// One exact user solve: x_u = (Y C_u Y^T + lambda I)^-1 Y C_u p_u, expanded as
/// YY^T + sum_{i in I_u} (c_ui - 1) y_i y_i^T on the left so only observed items
/// are touched. `yty` is the precomputed Y Y^T.
inline Vector solve_user(const Matrix& y_factors, InteractionMatrix::RowView row,
                         const Hyperparams& hp, const Matrix& yty, std::size_t u) {
    auto d = y_factors.rows();
    if (row.size() == 0) return Vector::Zero(d);  // zero right-hand side
    Matrix a = yty;
    Vector b = Vector::Zero(d);
    for (std::size_t e = 0; e < row.size(); ++e) {
        double c = confidence(row.counts[e], hp.alpha);
        auto y = y_factors.col(row.items[e]);
        a.selfadjointView<Eigen::Lower>().rankUpdate(y, c - 1.0);
        b.noalias() += c * y;
    }
    a.diagonal().array() += hp.lambda;
    return detail::spd_solve(a, b, "user", u);
}

/// One exact item solve against the given Y state (callers choose current Y for
/// Gauss-Seidel or a stale copy for Jacobi). Passing sppmi = nullptr gives the
/// plain WMF item update.
inline Vector solve_item(const Matrix& x_factors, const Matrix& y_factors,
                         InteractionMatrix::ColView col, const SppmiMatrix* sppmi,
                         std::size_t i, const Hyperparams& hp, const Matrix& xxt) {
    auto d = x_factors.rows();
    SppmiMatrix::RowView nbr{};
    if (sppmi) nbr = sppmi->row(i);
    if (col.size() == 0 && nbr.size() == 0) return Vector::Zero(d);
    Matrix a = xxt;
    Vector b = Vector::Zero(d);
    for (std::size_t e = 0; e < col.size(); ++e) {
        double c = confidence(col.counts[e], hp.alpha);
        auto x = x_factors.col(col.users[e]);
        a.selfadjointView<Eigen::Lower>().rankUpdate(x, c - 1.0);
        b.noalias() += c * x;
    }
    for (std::size_t e = 0; e < nbr.size(); ++e) {
        auto y = y_factors.col(nbr.neighbors[e]);
        a.selfadjointView<Eigen::Lower>().rankUpdate(y, 1.0);
        b.noalias() += nbr.values[e] * y;
    }
    a.diagonal().array() += hp.lambda;
    return detail::spd_solve(a, b, "item", i);
}

/// Full user half-sweep. Users are independent given Y, so the sweep runs in
/// parallel and the result does not depend on the thread count.
inline void update_users(FactorModel& model, const InteractionMatrix& train,
                         const Hyperparams& hp, unsigned n_threads = 1) {
    if (model.n_users() != train.n_users() || model.n_items() != train.n_items())
        throw std::invalid_argument("update_users: model/matrix dimensions differ");
    const Matrix yty = factor_gram(model.Y);
    parallel_for(0, train.n_users(), n_threads, [&](std::size_t u) {
        model.X.col(u) = solve_user(model.Y, train.row(u), hp, yty, u);
    });
}

/// Full item half-sweep in ascending index order. X X^T is computed once
/// (X is fixed here); neighbor sums read whichever Y state the sweep mode dictates.
inline void update_items(FactorModel& model, const InteractionMatrix& train,
                         const SppmiMatrix* sppmi, const Hyperparams& hp,
                         ItemSweep sweep = ItemSweep::gauss_seidel, unsigned n_threads = 1) {
    if (model.n_users() != train.n_users() || model.n_items() != train.n_items())
        throw std::invalid_argument("update_items: model/matrix dimensions differ");
    if (sppmi && sppmi->n_items() != train.n_items())
        throw std::invalid_argument("update_items: SPPMI dimension differs from item count");
    const Matrix xxt = factor_gram(model.X);
    if (sweep == ItemSweep::gauss_seidel) {
        for (std::size_t i = 0; i < train.n_items(); ++i)
            model.Y.col(i) = solve_item(model.X, model.Y, train.col(i), sppmi, i, hp, xxt);
    } else {
        const Matrix y_stale = model.Y;
        parallel_for(0, train.n_items(), n_threads, [&](std::size_t i) {
            model.Y.col(i) = solve_item(model.X, y_stale, train.col(i), sppmi, i, hp, xxt);
        });
    }
}

/// Exact objective value without forming any dense N x M product:
/// the all-pairs part of the interaction term collapses to
/// sum_u x_u^T (Y Y^T) x_u, and observed entries contribute the correction
/// c (1 - x.y)^2 - (x.y)^2. Deterministic for any thread count.
inline LossBreakdown loss(const FactorModel& model, const InteractionMatrix& train,
                          const SppmiMatrix* sppmi, const Hyperparams& hp,
                          unsigned n_threads = 1) {
    LossBreakdown out;
    const Matrix yty = factor_gram(model.Y);
    std::vector<double> per_user(train.n_users(), 0.0);
    parallel_for(0, train.n_users(), n_threads, [&](std::size_t u) {
        auto x = model.X.col(u);
        double t = x.dot(yty * x);
        auto row = train.row(u);
        for (std::size_t e = 0; e < row.size(); ++e) {
            double c = confidence(row.counts[e], hp.alpha);
            double score = x.dot(model.Y.col(row.items[e]));
            double resid = 1.0 - score;
            t += c * resid * resid - score * score;
        }
        per_user[u] = t;
    });
    for (double t : per_user) out.interaction_term += t;

    if (sppmi) {
        sppmi->for_each_pair([&](std::uint32_t i, std::uint32_t j, double s) {
            double resid = s - model.Y.col(i).dot(model.Y.col(j));
            out.embedding_term += resid * resid;
        });
    }
    out.regularization_term = hp.lambda * (model.X.squaredNorm() + model.Y.squaredNorm());
    out.total = out.interaction_term + out.embedding_term + out.regularization_term;
    return out;
}

struct FitResult {
    FactorModel model;
    std::vector<LossBreakdown> trace;  ///< loss after each completed sweep
};

/// init_model followed by n_iterations sweeps of (update_users; update_items).
/// In wmf mode any supplied SPPMI matrix is ignored.
inline FitResult fit(const InteractionMatrix& train, const SppmiMatrix* sppmi,
                     const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.mode == TrainMode::cemf && sppmi == nullptr)
        throw std::invalid_argument("fit: cemf mode requires an SPPMI matrix");
    const SppmiMatrix* s = cfg.mode == TrainMode::cemf ? sppmi : nullptr;
    if (s && s->n_items() != train.n_items())
        throw std::invalid_argument("fit: SPPMI dimension differs from item count");

    FitResult res{init_model(train.n_users(), train.n_items(), cfg.hp), {}};
    for (std::size_t sweep = 1; sweep <= cfg.hp.n_iterations; ++sweep) {
        update_users(res.model, train, cfg.hp, cfg.n_threads);
        update_items(res.model, train, s, cfg.hp, cfg.item_sweep, cfg.n_threads);
        if (!res.model.all_finite())
            throw SolverError("non-finite factor detected after sweep " + std::to_string(sweep));
        res.trace.push_back(loss(res.model, train, s, cfg.hp, cfg.n_threads));
        if (cfg.rel_tolerance && res.trace.size() >= 2) {
            double prev = res.trace[res.trace.size() - 2].total;
            double cur = res.trace.back().total;
            if (prev <= 0.0 || (prev - cur) / prev < *cfg.rel_tolerance) break;
        }
    }
    return res;
}

// --- model directory format -------------------------------------------------
//
// MODELDIR/
//   model.json   dims, mode, hyperparameters, loss trace, binary layout
//   X.bin        d x N doubles, little-endian, column-major
//   Y.bin        d x M doubles, little-endian, column-major

struct TrainedModel {
    FactorModel model;
    TrainMode mode = TrainMode::cemf;
    std::vector<LossBreakdown> trace;
};

namespace detail {

inline void write_matrix_bin(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!out) throw IoError("write failed: " + path.string());
}

inline Matrix read_matrix_bin(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open: " + path.string());
    auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != sizeof(double) * rows * cols)
        throw IoError(path.string() + ": expected " + std::to_string(sizeof(double) * rows * cols) +
                      " bytes for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " matrix, found " + std::to_string(bytes));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("read failed: " + path.string());
    return m;
}

}  // namespace detail

inline void save_model(const std::filesystem::path& dir, const FactorModel& model,
                       TrainMode mode, const std::vector<LossBreakdown>& trace) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["format"] = {{"dtype", "float64"}, {"order", "column_major"}, {"endian", "little"}};
    j["mode"] = to_string(mode);
    j["d"] = model.d();
    j["n_users"] = model.n_users();
    j["n_items"] = model.n_items();
    j["hyperparams"] = {{"d", model.hp.d},
                        {"alpha", model.hp.alpha},
                        {"lambda", model.hp.lambda},
                        {"k", model.hp.k},
                        {"n_iterations", model.hp.n_iterations},
                        {"init_scale", model.hp.init_scale},
                        {"seed", model.hp.seed}};
    nlohmann::json jt = nlohmann::json::array();
    for (const LossBreakdown& l : trace)
        jt.push_back({{"interaction", l.interaction_term},
                      {"embedding", l.embedding_term},
                      {"regularization", l.regularization_term},
                      {"total", l.total}});
    j["loss_trace"] = std::move(jt);
    std::ofstream out(dir / "model.json");
    if (!out) throw IoError("cannot open for writing: " + (dir / "model.json").string());
    out << j.dump(2) << '\n';
    detail::write_matrix_bin(dir / "X.bin", model.X);
    detail::write_matrix_bin(dir / "Y.bin", model.Y);
}

inline TrainedModel load_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw IoError("cannot open: " + (dir / "model.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError((dir / "model.json").string(), 0, e.what());
    }
    TrainedModel tm;
    tm.mode = train_mode_from_string(j.at("mode").get<std::string>());
    const auto& hp = j.at("hyperparams");
    tm.model.hp.d = hp.at("d").get<std::size_t>();
    tm.model.hp.alpha = hp.at("alpha").get<double>();
    tm.model.hp.lambda = hp.at("lambda").get<double>();
    tm.model.hp.k = hp.at("k").get<std::size_t>();
    tm.model.hp.n_iterations = hp.at("n_iterations").get<std::size_t>();
    tm.model.hp.init_scale = hp.at("init_scale").get<double>();
    tm.model.hp.seed = hp.at("seed").get<std::uint64_t>();
    auto d = j.at("d").get<std::size_t>();
    auto n = j.at("n_users").get<std::size_t>();
    auto m = j.at("n_items").get<std::size_t>();
    tm.model.X = detail::read_matrix_bin(dir / "X.bin", d, n);
    tm.model.Y = detail::read_matrix_bin(dir / "Y.bin", d, m);
    for (const auto& l : j.at("loss_trace"))
        tm.trace.push_back({l.at("interaction").get<double>(), l.at("embedding").get<double>(),
                            l.at("regularization").get<double>(), l.at("total").get<double>()});
    return tm;
}

}  // namespace cemf
