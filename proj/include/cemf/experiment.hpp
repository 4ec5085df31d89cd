#pragma once

// Full-pipeline experiment driver: load -> filter -> split -> SPPMI -> grid
// of (mode, d, alpha) fits -> alpha selection on validation Recall@10 ->
// test-set reports plus a WMF/CEMF comparison summary. Everything written
// under one experiment directory; reruns with the same config are
// byte-identical.

#include "cemf/core.hpp"
#include "cemf/eval.hpp"
#include "cemf/ingest.hpp"
#include "cemf/solver.hpp"
#include "cemf/sppmi.hpp"

#include <json.hpp>

namespace cemf {

struct ExperimentConfig {
    std::string dataset;  ///< movielens | tasteprofile | onlineretail
    std::filesystem::path input;
    std::filesystem::path out_dir;

    double rating_threshold = 4.0;
    std::size_t min_users_per_item = 0;
    std::size_t min_items_per_user = 0;
    bool binarize = false;

    double test_frac = 0.2;
    double val_frac = 0.1;
    std::vector<std::uint64_t> seeds = {1};

    std::vector<std::size_t> d_values = {30};
    std::vector<double> alpha_values = {1.0, 10.0, 40.0, 100.0};
    double lambda = 0.01;
    std::size_t k = 1;
    std::size_t iterations = 20;
    double init_scale = 0.01;

    std::vector<std::size_t> n_values = {5, 10, 20, 50, 100};
    std::vector<std::string> modes = {"wmf", "cemf"};
    bool exclude_val_in_test = true;  ///< drop validation items from test-time candidates

    std::size_t workers = 1;  ///< concurrent grid cells
    unsigned threads = 1;     ///< solver threads per cell (0 = hardware)

    void validate() const {
        if (dataset != "movielens" && dataset != "tasteprofile" && dataset != "onlineretail")
            throw std::invalid_argument("experiment: unknown dataset '" + dataset + "'");
        if (seeds.empty() || d_values.empty() || alpha_values.empty() || modes.empty() ||
            n_values.empty())
            throw std::invalid_argument("experiment: grid lists must be non-empty");
        for (const std::string& m : modes) train_mode_from_string(m);
    }
};

inline RawEvents load_dataset(const std::string& dataset, const std::filesystem::path& input,
                              double rating_threshold) {
    if (dataset == "movielens") return load_movielens(input, rating_threshold);
    if (dataset == "tasteprofile") return load_play_counts(input);
    if (dataset == "onlineretail") return load_transactions(input);
    throw std::invalid_argument("unknown dataset '" + dataset + "'");
}

inline nlohmann::json experiment_manifest(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["command"] = "experiment";
    j["dataset"] = cfg.dataset;
    j["input"] = cfg.input.string();
    j["out"] = cfg.out_dir.string();
    j["rating-threshold"] = cfg.rating_threshold;
    j["min-users-per-item"] = cfg.min_users_per_item;
    j["min-items-per-user"] = cfg.min_items_per_user;
    j["binarize"] = cfg.binarize;
    j["test-frac"] = cfg.test_frac;
    j["val-frac"] = cfg.val_frac;
    j["seeds"] = cfg.seeds;
    j["d"] = cfg.d_values;
    j["alpha"] = cfg.alpha_values;
    j["lambda"] = cfg.lambda;
    j["k"] = cfg.k;
    j["iters"] = cfg.iterations;
    j["init-scale"] = cfg.init_scale;
    j["n"] = cfg.n_values;
    j["modes"] = cfg.modes;
    j["include-val-candidates"] = !cfg.exclude_val_in_test;
    j["workers"] = cfg.workers;
    j["threads"] = cfg.threads;
    return j;
}

namespace detail {

struct CellOutcome {
    bool ok = false;
    std::string error;
    double val_recall10 = std::numeric_limits<double>::quiet_NaN();
    std::filesystem::path model_dir;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

}  // namespace detail

/// Runs the configured grid, returns the summary (also written to
/// out_dir/summary.json). Failed grid cells are recorded in the summary and
/// do not stop the remaining cells.
inline nlohmann::json run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    detail::write_json(cfg.out_dir / "manifest.json", experiment_manifest(cfg));

    RawEvents events = load_dataset(cfg.dataset, cfg.input, cfg.rating_threshold);
    events = filter_activity(events, cfg.min_users_per_item, cfg.min_items_per_user, cfg.binarize);

    nlohmann::json summary;
    summary["dataset"] = cfg.dataset;
    summary["lambda"] = cfg.lambda;
    summary["k"] = cfg.k;
    summary["log_base"] = "e";
    nlohmann::json seeds_json;

    struct Cell {
        std::size_t mode_idx, d_idx, alpha_idx;
    };

    for (std::uint64_t seed : cfg.seeds) {
        const std::filesystem::path seed_dir = cfg.out_dir / "seeds" / std::to_string(seed);
        SplitDataset split = split_per_user(events, cfg.test_frac, cfg.val_frac, seed);
        split.save(seed_dir / "split");

        CooccurrenceStats stats = count_cooccurrences(split.train);
        SppmiMatrix sppmi = build_sppmi(stats, cfg.k);
        sppmi.save(seed_dir / "sppmi.tsv");

        const bool has_val = split.validation.nnz() > 0;

        std::vector<Cell> cells;
        for (std::size_t mi = 0; mi < cfg.modes.size(); ++mi)
            for (std::size_t di = 0; di < cfg.d_values.size(); ++di)
                for (std::size_t ai = 0; ai < cfg.alpha_values.size(); ++ai)
                    cells.push_back({mi, di, ai});
        std::vector<detail::CellOutcome> outcomes(cells.size());

        parallel_for(0, cells.size(), static_cast<unsigned>(cfg.workers), [&](std::size_t c) {
            const Cell& cell = cells[c];
            detail::CellOutcome& out = outcomes[c];
            try {
                TrainConfig tc;
                tc.mode = train_mode_from_string(cfg.modes[cell.mode_idx]);
                tc.n_threads = cfg.threads;
                tc.hp.d = cfg.d_values[cell.d_idx];
                tc.hp.alpha = cfg.alpha_values[cell.alpha_idx];
                tc.hp.lambda = cfg.lambda;
                tc.hp.k = cfg.k;
                tc.hp.n_iterations = cfg.iterations;
                tc.hp.init_scale = cfg.init_scale;
                // same init for every mode at a given (seed, d, alpha)
                tc.hp.seed = detail::mix_seed(detail::mix_seed(seed, tc.hp.d), cell.alpha_idx);

                FitResult fitted = fit(split.train, tc.mode == TrainMode::cemf ? &sppmi : nullptr, tc);

                std::string cell_name = cfg.modes[cell.mode_idx] + "_d" +
                                        std::to_string(tc.hp.d) + "_a" +
                                        detail::format_double(tc.hp.alpha);
                out.model_dir = seed_dir / "models" / cell_name;
                save_model(out.model_dir, fitted.model, tc.mode, fitted.trace);

                if (has_val) {
                    Recommendations recs = recommend_all(fitted.model, split.train, nullptr, 10,
                                                         &split.validation, cfg.threads);
                    EvalReport rep = precision_recall_at_n(recs, split.validation, {10});
                    out.val_recall10 = rep.overall.at(10).recall;
                    detail::write_json(out.model_dir / "val.json",
                                       {{"n", 10}, {"recall", out.val_recall10}});
                }
                out.ok = true;
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        });

        nlohmann::json seed_json;
        for (std::size_t mi = 0; mi < cfg.modes.size(); ++mi) {
            nlohmann::json mode_json;
            for (std::size_t di = 0; di < cfg.d_values.size(); ++di) {
                nlohmann::json d_json;
                nlohmann::json failed = nlohmann::json::object();
                for (std::size_t c = 0; c < cells.size(); ++c)
                    if (cells[c].mode_idx == mi && cells[c].d_idx == di && !outcomes[c].ok)
                        failed[detail::format_double(cfg.alpha_values[cells[c].alpha_idx])] =
                            outcomes[c].error;
                if (!failed.empty()) d_json["failed_cells"] = failed;
                // pick best alpha by validation Recall@10 (ties: first, i.e. smaller index)
                std::size_t best = cells.size();
                for (std::size_t c = 0; c < cells.size(); ++c) {
                    if (cells[c].mode_idx != mi || cells[c].d_idx != di || !outcomes[c].ok) continue;
                    if (cfg.alpha_values.size() > 1 && has_val) {
                        if (best == cells.size() ||
                            outcomes[c].val_recall10 > outcomes[best].val_recall10)
                            best = c;
                    } else if (best == cells.size()) {
                        best = c;
                    }
                }
                if (best == cells.size()) {
                    std::string first_error = "all grid cells failed";
                    for (std::size_t c = 0; c < cells.size(); ++c)
                        if (cells[c].mode_idx == mi && cells[c].d_idx == di &&
                            !outcomes[c].error.empty()) {
                            first_error = outcomes[c].error;
                            break;
                        }
                    d_json["error"] = first_error;
                } else if (cfg.alpha_values.size() > 1 && !has_val) {
                    d_json["error"] = "validation split is empty; cannot tune alpha";
                } else {
                    try {
                        TrainedModel tm = load_model(outcomes[best].model_dir);
                        const InteractionMatrix* exclude =
                            cfg.exclude_val_in_test && has_val ? &split.validation : nullptr;
                        std::size_t n_max = *std::max_element(cfg.n_values.begin(), cfg.n_values.end());
                        Recommendations recs = recommend_all(tm.model, split.train, exclude, n_max,
                                                             &split.test, cfg.threads);
                        EvalReport rep = evaluate_report(recs, split.train, split.test, cfg.n_values);

                        std::filesystem::path report_dir =
                            seed_dir / "reports" /
                            (cfg.modes[mi] + "_d" + std::to_string(cfg.d_values[di]));
                        std::filesystem::create_directories(report_dir);
                        nlohmann::json report_json = to_json(rep);
                        report_json["model"] = outcomes[best].model_dir.string();
                        detail::write_json(report_dir / "report.json", report_json);
                        detail::write_text(report_dir / "report.csv", to_csv(rep));

                        d_json["best_alpha"] = cfg.alpha_values[cells[best].alpha_idx];
                        if (has_val) d_json["val_recall10"] = outcomes[best].val_recall10;
                        d_json["test"] = to_json(rep);
                    } catch (const std::exception& e) {
                        d_json["error"] = e.what();
                    }
                }
                mode_json[std::to_string(cfg.d_values[di])] = std::move(d_json);
            }
            seed_json[cfg.modes[mi]] = std::move(mode_json);
        }
        seeds_json[std::to_string(seed)] = std::move(seed_json);
    }
    summary["seeds"] = std::move(seeds_json);

    // WMF vs CEMF deltas on the headline metrics, when both modes ran
    if (std::find(cfg.modes.begin(), cfg.modes.end(), "wmf") != cfg.modes.end() &&
        std::find(cfg.modes.begin(), cfg.modes.end(), "cemf") != cfg.modes.end()) {
        nlohmann::json comparison;
        for (std::size_t d : cfg.d_values) {
            nlohmann::json per_d;
            for (std::uint64_t seed : cfg.seeds) {
                const auto& seed_json = summary["seeds"][std::to_string(seed)];
                const auto& wmf = seed_json["wmf"][std::to_string(d)];
                const auto& cemf = seed_json["cemf"][std::to_string(d)];
                if (wmf.contains("error") || cemf.contains("error")) continue;
                auto metric = [&](const nlohmann::json& mode_json, std::size_t n,
                                  const char* name) -> double {
                    for (const auto& row : mode_json["test"]["overall"])
                        if (row["n"].get<std::size_t>() == n) return row[name].get<double>();
                    return std::numeric_limits<double>::quiet_NaN();
                };
                nlohmann::json row;
                row["precision5_wmf"] = metric(wmf, 5, "precision");
                row["precision5_cemf"] = metric(cemf, 5, "precision");
                row["precision5_delta"] = metric(cemf, 5, "precision") - metric(wmf, 5, "precision");
                row["recall5_wmf"] = metric(wmf, 5, "recall");
                row["recall5_cemf"] = metric(cemf, 5, "recall");
                row["recall5_delta"] = metric(cemf, 5, "recall") - metric(wmf, 5, "recall");
                per_d[std::to_string(seed)] = std::move(row);
            }
            comparison[std::to_string(d)] = std::move(per_d);
        }
        summary["comparison"] = std::move(comparison);
    }

    detail::write_json(cfg.out_dir / "summary.json", summary);
    return summary;
}

}  // namespace cemf
