// cemf: command-line toolkit for implicit-feedback top-n recommendation.
// Subcommands cover the whole pipeline: prepare -> sppmi -> train ->
// evaluate -> recommend, plus an end-to-end grid runner (experiment).
// Every subcommand accepts --config FILE (JSON, keys = long flag names);
// command-line flags override config keys. Manifests written next to each
// artifact are valid config files for reproducing it.

#include "cemf/core.hpp"
#include "cemf/eval.hpp"
#include "cemf/experiment.hpp"
#include "cemf/ingest.hpp"
#include "cemf/solver.hpp"
#include "cemf/sppmi.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <iostream>
#include <set>

namespace {

using nlohmann::json;

std::string scalar_to_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
}

void add_config_option(CLI::App* sub) {
    // every option takes the last occurrence, so config-injected tokens
    // (placed first) lose against explicit flags
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", "JSON config file; explicit flags override its keys")
        ->configurable(false);
}

// Expands `--config FILE` into `--key=value` tokens inserted right after the
// subcommand name. Keys are long flag names; "command" and nested objects
// (e.g. a manifest's "results" block) are informational and skipped.
std::vector<std::string> apply_config_file(std::vector<std::string> args,
                                           const std::set<std::string>& subcommands) {
    std::size_t sub_pos = args.size();
    for (std::size_t p = 0; p < args.size(); ++p)
        if (subcommands.count(args[p])) {
            sub_pos = p;
            break;
        }
    if (sub_pos == args.size()) return args;

    std::string config_path;
    std::vector<std::string> rest;
    for (std::size_t p = sub_pos + 1; p < args.size(); ++p) {
        if (args[p] == "--config") {
            if (p + 1 >= args.size())
                throw cemf::Error("cli_error", "--config requires a file path");
            config_path = args[++p];
        } else if (args[p].rfind("--config=", 0) == 0) {
            config_path = args[p].substr(9);
        } else {
            rest.push_back(args[p]);
        }
    }
    if (config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw cemf::IoError("cannot open config: " + config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw cemf::Error("config_error", config_path + ": not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw cemf::Error("config_error", config_path + ": expected a JSON object");

    std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1);
    for (const auto& [key, value] : j.items()) {
        if (key == "command" || value.is_object() || value.is_null()) continue;
        std::string rendered;
        if (value.is_array()) {
            for (const auto& el : value) {
                if (!rendered.empty()) rendered += ',';
                rendered += scalar_to_string(el);
            }
        } else {
            rendered = scalar_to_string(value);
        }
        out.push_back("--" + key + "=" + rendered);
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw cemf::IoError("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw cemf::IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- prepare --

struct PrepareOpts {
    std::string dataset;
    std::string input;
    std::string out;
    double test_frac = 0.2;
    double val_frac = 0.1;
    std::uint64_t seed = 1;
    bool binarize = false;
    std::size_t min_users_per_item = 0;
    std::size_t min_items_per_user = 0;
    double rating_threshold = 4.0;
};

void run_prepare(const PrepareOpts& o) {
    cemf::RawEvents events = cemf::load_dataset(o.dataset, o.input, o.rating_threshold);
    std::size_t loaded = events.records.size();
    events = cemf::filter_activity(events, o.min_users_per_item, o.min_items_per_user, o.binarize);
    cemf::SplitDataset split = cemf::split_per_user(events, o.test_frac, o.val_frac, o.seed);
    split.save(o.out);

    json manifest;
    manifest["command"] = "prepare";
    manifest["dataset"] = o.dataset;
    manifest["input"] = o.input;
    manifest["out"] = o.out;
    manifest["test-frac"] = o.test_frac;
    manifest["val-frac"] = o.val_frac;
    manifest["seed"] = o.seed;
    manifest["binarize"] = o.binarize;
    manifest["min-users-per-item"] = o.min_users_per_item;
    manifest["min-items-per-user"] = o.min_items_per_user;
    manifest["rating-threshold"] = o.rating_threshold;
    manifest["results"] = {{"records_loaded", loaded},
                           {"records_after_filter", events.records.size()},
                           {"n_users", split.users.size()},
                           {"n_items", split.items.size()},
                           {"nnz_train", split.train.nnz()},
                           {"nnz_val", split.validation.nnz()},
                           {"nnz_test", split.test.nnz()},
                           {"sparsity_train_percent", split.train.sparsity_percent()}};
    write_json_file(std::filesystem::path(o.out) / "manifest.json", manifest);

    std::cout << "prepared " << o.out << ": " << split.users.size() << " users, "
              << split.items.size() << " items, train/val/test nnz " << split.train.nnz() << "/"
              << split.validation.nnz() << "/" << split.test.nnz() << ", train sparsity "
              << cemf::detail::format_double(split.train.sparsity_percent()) << "%\n";
}

// ------------------------------------------------------------------ sppmi --

struct SppmiOpts {
    std::string train;
    std::string out;
    std::size_t k = 1;
    std::size_t max_items_per_user = 0;  // 0 = unlimited
    std::uint64_t sample_seed = 0;
};

void run_sppmi(const SppmiOpts& o) {
    cemf::InteractionMatrix train = cemf::InteractionMatrix::load(o.train);
    cemf::CooccurrenceOptions copts;
    if (o.max_items_per_user > 0) copts.max_items_per_user = o.max_items_per_user;
    copts.sample_seed = o.sample_seed;
    cemf::CooccurrenceStats stats = cemf::count_cooccurrences(train, copts);
    cemf::SppmiMatrix sppmi = cemf::build_sppmi(stats, o.k);
    sppmi.save(o.out);

    json manifest;
    manifest["command"] = "sppmi";
    manifest["train"] = o.train;
    manifest["out"] = o.out;
    manifest["k"] = o.k;
    manifest["max-items-per-user"] = o.max_items_per_user;
    manifest["sample-seed"] = o.sample_seed;
    manifest["results"] = {{"n_items", sppmi.n_items()},
                           {"n_pairs", sppmi.n_pairs()},
                           {"total_cooccurrences", stats.total},
                           {"sparsity_percent", cemf::sppmi_sparsity(sppmi)},
                           {"log_base", "e"}};
    write_json_file(o.out + ".json", manifest);

    json summary = {{"n_items", sppmi.n_items()},
                    {"n_pairs", sppmi.n_pairs()},
                    {"sparsity_percent", cemf::sppmi_sparsity(sppmi)},
                    {"log_base", "e"}};
    std::cout << summary.dump() << '\n';
}

// ------------------------------------------------------------------ train --

struct TrainOpts {
    std::string train;
    std::string sppmi;
    std::string mode = "cemf";
    std::string out;
    std::size_t d = 30;
    double alpha = 40.0;
    double lambda = 0.01;
    std::size_t iters = 20;
    std::uint64_t seed = 0;
    double init_scale = 0.01;
    std::size_t k = 1;
    double tol = 0.0;  // 0 = fixed iteration count
    bool jacobi = false;
    unsigned threads = 0;
};

void run_train(const TrainOpts& o) {
    cemf::InteractionMatrix train = cemf::InteractionMatrix::load(o.train);
    cemf::TrainConfig cfg;
    cfg.mode = cemf::train_mode_from_string(o.mode);
    cfg.item_sweep = o.jacobi ? cemf::ItemSweep::jacobi : cemf::ItemSweep::gauss_seidel;
    cfg.n_threads = o.threads;
    if (o.tol > 0.0) cfg.rel_tolerance = o.tol;
    cfg.hp.d = o.d;
    cfg.hp.alpha = o.alpha;
    cfg.hp.lambda = o.lambda;
    cfg.hp.k = o.k;
    cfg.hp.n_iterations = o.iters;
    cfg.hp.init_scale = o.init_scale;
    cfg.hp.seed = o.seed;

    std::optional<cemf::SppmiMatrix> sppmi;
    if (cfg.mode == cemf::TrainMode::cemf) {
        if (o.sppmi.empty())
            throw std::invalid_argument("train: --sppmi is required in cemf mode");
        sppmi = cemf::SppmiMatrix::load(o.sppmi);
    } else if (!o.sppmi.empty()) {
        throw std::invalid_argument("train: --sppmi is only valid in cemf mode");
    }

    cemf::FitResult res = cemf::fit(train, sppmi ? &*sppmi : nullptr, cfg);
    cemf::save_model(o.out, res.model, cfg.mode, res.trace);

    json manifest;
    manifest["command"] = "train";
    manifest["train"] = o.train;
    if (!o.sppmi.empty()) manifest["sppmi"] = o.sppmi;
    manifest["mode"] = o.mode;
    manifest["out"] = o.out;
    manifest["d"] = o.d;
    manifest["alpha"] = o.alpha;
    manifest["lambda"] = o.lambda;
    manifest["iters"] = o.iters;
    manifest["seed"] = o.seed;
    manifest["init-scale"] = o.init_scale;
    manifest["k"] = o.k;
    manifest["tol"] = o.tol;
    manifest["jacobi"] = o.jacobi;
    write_json_file(std::filesystem::path(o.out) / "manifest.json", manifest);

    std::cout << "trained " << o.mode << " model (" << res.trace.size() << " sweeps), final loss "
              << cemf::detail::format_double(res.trace.back().total) << ", saved to " << o.out
              << '\n';
}

// --------------------------------------------------------------- evaluate --

struct EvaluateOpts {
    std::string model;
    std::string train;
    std::string test;
    std::string val;
    std::string out = "report.json";
    std::vector<std::size_t> n_values = {5, 10, 20, 50, 100};
    bool include_val_candidates = false;
    unsigned threads = 0;
};

void run_evaluate(const EvaluateOpts& o) {
    cemf::TrainedModel tm = cemf::load_model(o.model);
    cemf::InteractionMatrix train = cemf::InteractionMatrix::load(o.train);
    cemf::InteractionMatrix test = cemf::InteractionMatrix::load(o.test);
    std::optional<cemf::InteractionMatrix> val;
    if (!o.val.empty()) val = cemf::InteractionMatrix::load(o.val);

    const cemf::InteractionMatrix* exclude =
        (val && !o.include_val_candidates) ? &*val : nullptr;
    std::size_t n_max = *std::max_element(o.n_values.begin(), o.n_values.end());
    cemf::Recommendations recs =
        cemf::recommend_all(tm.model, train, exclude, n_max, &test, o.threads);
    cemf::EvalReport rep = cemf::evaluate_report(recs, train, test, o.n_values);

    json report;
    report["command"] = "evaluate";
    report["model"] = o.model;
    report["train"] = o.train;
    report["test"] = o.test;
    if (!o.val.empty()) report["val"] = o.val;
    report["n"] = o.n_values;
    report["out"] = o.out;
    report["include-val-candidates"] = o.include_val_candidates;
    report["results"] = cemf::to_json(rep);
    write_json_file(o.out, report);

    std::filesystem::path csv_path(o.out);
    csv_path.replace_extension(".csv");
    std::ofstream csv(csv_path);
    if (!csv) throw cemf::IoError("cannot open for writing: " + csv_path.string());
    csv << cemf::to_csv(rep);

    std::cout << cemf::to_json(rep).dump() << '\n';
}

// -------------------------------------------------------------- recommend --

struct RecommendOpts {
    std::string model;
    std::string train;
    std::string val;
    std::string out;
    std::string users_map;
    std::string items_map;
    std::size_t n = 10;
    std::vector<std::size_t> users;  // empty = all
    unsigned threads = 0;
};

void run_recommend(const RecommendOpts& o) {
    cemf::TrainedModel tm = cemf::load_model(o.model);
    cemf::InteractionMatrix train = cemf::InteractionMatrix::load(o.train);
    std::optional<cemf::InteractionMatrix> val;
    if (!o.val.empty()) val = cemf::InteractionMatrix::load(o.val);
    std::optional<cemf::IdMap> users_map, items_map;
    if (!o.users_map.empty()) users_map = cemf::IdMap::load(o.users_map);
    if (!o.items_map.empty()) items_map = cemf::IdMap::load(o.items_map);

    std::vector<std::size_t> users = o.users;
    if (users.empty()) {
        users.resize(train.n_users());
        for (std::size_t u = 0; u < users.size(); ++u) users[u] = u;
    }

    std::ofstream out(o.out);
    if (!out) throw cemf::IoError("cannot open for writing: " + o.out);
    out << "user\trank\titem\tscore\n";
    for (std::size_t u : users) {
        auto list = cemf::recommend_top_n(tm.model, train, val ? &*val : nullptr, u, o.n);
        for (std::size_t r = 0; r < list.size(); ++r) {
            double score = tm.model.X.col(u).dot(tm.model.Y.col(list[r]));
            if (users_map) out << users_map->key(u);
            else out << u;
            out << '\t' << (r + 1) << '\t';
            if (items_map) out << items_map->key(list[r]);
            else out << list[r];
            out << '\t' << cemf::detail::format_double(score) << '\n';
        }
    }
    if (!out) throw cemf::IoError("write failed: " + o.out);
    std::cout << "wrote top-" << o.n << " lists for " << users.size() << " users to " << o.out
              << '\n';
}

// ------------------------------------------------------------- experiment --

struct ExperimentOpts {
    std::string dataset;
    std::string input;
    std::string out;
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
    std::size_t iters = 20;
    double init_scale = 0.01;
    std::vector<std::size_t> n_values = {5, 10, 20, 50, 100};
    std::vector<std::string> modes = {"wmf", "cemf"};
    bool include_val_candidates = false;
    std::size_t workers = 1;
    unsigned threads = 0;
};

void run_experiment_cmd(const ExperimentOpts& o) {
    cemf::ExperimentConfig cfg;
    cfg.dataset = o.dataset;
    cfg.input = o.input;
    cfg.out_dir = o.out;
    cfg.rating_threshold = o.rating_threshold;
    cfg.min_users_per_item = o.min_users_per_item;
    cfg.min_items_per_user = o.min_items_per_user;
    cfg.binarize = o.binarize;
    cfg.test_frac = o.test_frac;
    cfg.val_frac = o.val_frac;
    cfg.seeds = o.seeds;
    cfg.d_values = o.d_values;
    cfg.alpha_values = o.alpha_values;
    cfg.lambda = o.lambda;
    cfg.k = o.k;
    cfg.iterations = o.iters;
    cfg.init_scale = o.init_scale;
    cfg.n_values = o.n_values;
    cfg.modes = o.modes;
    cfg.exclude_val_in_test = !o.include_val_candidates;
    cfg.workers = o.workers;
    cfg.threads = o.threads;

    json summary = cemf::run_experiment(cfg);
    if (summary.contains("comparison")) std::cout << summary["comparison"].dump(2) << '\n';
    std::cout << "experiment written to " << o.out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Implicit-feedback top-n recommender: weighted matrix factorization (wmf) and "
                 "co-occurrence-embedded factorization (cemf)"};
    app.require_subcommand(1);

    PrepareOpts prep;
    CLI::App* prepare = app.add_subcommand("prepare", "Load a raw dataset, filter, and split");
    add_config_option(prepare);
    prepare->add_option("--dataset", prep.dataset, "movielens | tasteprofile | onlineretail")
        ->required();
    prepare->add_option("--input", prep.input, "raw dataset file")->required();
    prepare->add_option("--out", prep.out, "output directory")->required();
    prepare->add_option("--test-frac", prep.test_frac, "per-user test fraction")
        ->capture_default_str();
    prepare->add_option("--val-frac", prep.val_frac, "validation share of the non-test remainder")
        ->capture_default_str();
    prepare->add_option("--seed", prep.seed, "split seed")->capture_default_str();
    prepare->add_flag("--binarize", prep.binarize, "set all surviving counts to 1");
    prepare->add_option("--min-users-per-item", prep.min_users_per_item)->capture_default_str();
    prepare->add_option("--min-items-per-user", prep.min_items_per_user)->capture_default_str();
    prepare->add_option("--rating-threshold", prep.rating_threshold,
                        "movielens: keep ratings at or above this")
        ->capture_default_str();
    prepare->callback([&] { run_prepare(prep); });

    SppmiOpts spp;
    CLI::App* sppmi = app.add_subcommand("sppmi", "Build the item-item SPPMI matrix from a train split");
    add_config_option(sppmi);
    sppmi->add_option("--train", spp.train, "train split (triplet format)")->required();
    sppmi->add_option("--k", spp.k, "shift parameter (positive integer)")->capture_default_str();
    sppmi->add_option("--out", spp.out, "output path")->required();
    sppmi->add_option("--max-items-per-user", spp.max_items_per_user,
                      "subsample longer interaction lists before pairing (0 = unlimited)")
        ->capture_default_str();
    sppmi->add_option("--sample-seed", spp.sample_seed)->capture_default_str();
    sppmi->callback([&] { run_sppmi(spp); });

    TrainOpts tr;
    CLI::App* train = app.add_subcommand("train", "Fit factors by alternating least squares");
    add_config_option(train);
    train->add_option("--train", tr.train, "train split (triplet format)")->required();
    train->add_option("--sppmi", tr.sppmi, "SPPMI matrix (cemf mode only)");
    train->add_option("--mode", tr.mode, "wmf | cemf")->capture_default_str();
    train->add_option("--d", tr.d, "factor dimensionality")->capture_default_str();
    train->add_option("--alpha", tr.alpha, "confidence slope")->capture_default_str();
    train->add_option("--lambda", tr.lambda, "L2 regularization")->capture_default_str();
    train->add_option("--iters", tr.iters, "ALS sweeps")->capture_default_str();
    train->add_option("--seed", tr.seed, "factor init seed")->capture_default_str();
    train->add_option("--init-scale", tr.init_scale, "stddev of factor init")->capture_default_str();
    train->add_option("--k", tr.k, "SPPMI shift used to build --sppmi (recorded)")
        ->capture_default_str();
    train->add_option("--tol", tr.tol, "early-stop relative loss decrease (0 = off)")
        ->capture_default_str();
    train->add_flag("--jacobi", tr.jacobi, "parallel stale-Y item sweep instead of Gauss-Seidel");
    train->add_option("--threads", tr.threads, "solver threads (0 = hardware)")
        ->capture_default_str();
    train->add_option("--out", tr.out, "model directory")->required();
    train->callback([&] { run_train(tr); });

    EvaluateOpts ev;
    CLI::App* evaluate = app.add_subcommand("evaluate", "Precision@n / Recall@n on a test split");
    add_config_option(evaluate);
    evaluate->add_option("--model", ev.model, "model directory")->required();
    evaluate->add_option("--train", ev.train, "train split (candidate exclusions, groups)")
        ->required();
    evaluate->add_option("--test", ev.test, "test split (ground truth)")->required();
    evaluate->add_option("--val", ev.val, "validation split (excluded from candidates)");
    evaluate->add_option("--n", ev.n_values, "cutoff list")->delimiter(',')->capture_default_str();
    evaluate->add_option("--out", ev.out, "report path (.csv written alongside)")
        ->capture_default_str();
    evaluate->add_flag("--include-val-candidates", ev.include_val_candidates,
                       "keep validation items among candidates (ablation)");
    evaluate->add_option("--threads", ev.threads)->capture_default_str();
    evaluate->callback([&] { run_evaluate(ev); });

    RecommendOpts rec;
    CLI::App* recommend = app.add_subcommand("recommend", "Write top-n lists for users");
    add_config_option(recommend);
    recommend->add_option("--model", rec.model, "model directory")->required();
    recommend->add_option("--train", rec.train, "train split (consumed items excluded)")->required();
    recommend->add_option("--val", rec.val, "additional exclusions (triplet format)");
    recommend->add_option("--n", rec.n, "list length")->capture_default_str();
    recommend->add_option("--users", rec.users, "user indices (default: all)")->delimiter(',');
    recommend->add_option("--users-map", rec.users_map, "users.map for original ids in output");
    recommend->add_option("--items-map", rec.items_map, "items.map for original ids in output");
    recommend->add_option("--threads", rec.threads)->capture_default_str();
    recommend->add_option("--out", rec.out, "output TSV")->required();
    recommend->callback([&] { run_recommend(rec); });

    ExperimentOpts ex;
    CLI::App* experiment = app.add_subcommand(
        "experiment", "Full pipeline over a (mode, d, alpha) grid with alpha tuned on validation");
    add_config_option(experiment);
    experiment->add_option("--dataset", ex.dataset, "movielens | tasteprofile | onlineretail")
        ->required();
    experiment->add_option("--input", ex.input, "raw dataset file")->required();
    experiment->add_option("--out", ex.out, "experiment directory")->required();
    experiment->add_option("--rating-threshold", ex.rating_threshold)->capture_default_str();
    experiment->add_option("--min-users-per-item", ex.min_users_per_item)->capture_default_str();
    experiment->add_option("--min-items-per-user", ex.min_items_per_user)->capture_default_str();
    experiment->add_flag("--binarize", ex.binarize);
    experiment->add_option("--test-frac", ex.test_frac)->capture_default_str();
    experiment->add_option("--val-frac", ex.val_frac)->capture_default_str();
    experiment->add_option("--seeds", ex.seeds, "split seeds")->delimiter(',')->capture_default_str();
    experiment->add_option("--d", ex.d_values, "factor dimensionalities")
        ->delimiter(',')
        ->capture_default_str();
    experiment->add_option("--alpha", ex.alpha_values, "confidence slopes to tune over")
        ->delimiter(',')
        ->capture_default_str();
    experiment->add_option("--lambda", ex.lambda)->capture_default_str();
    experiment->add_option("--k", ex.k)->capture_default_str();
    experiment->add_option("--iters", ex.iters)->capture_default_str();
    experiment->add_option("--init-scale", ex.init_scale)->capture_default_str();
    experiment->add_option("--n", ex.n_values, "evaluation cutoffs")
        ->delimiter(',')
        ->capture_default_str();
    experiment->add_option("--modes", ex.modes)->delimiter(',')->capture_default_str();
    experiment->add_flag("--include-val-candidates", ex.include_val_candidates);
    experiment->add_option("--workers", ex.workers, "concurrent grid cells")->capture_default_str();
    experiment->add_option("--threads", ex.threads, "solver threads per cell")
        ->capture_default_str();
    experiment->callback([&] { run_experiment_cmd(ex); });

    // subcommand callbacks run inside parse(), so domain errors surface here too
    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = apply_config_file(std::move(args),
                                 {"prepare", "sppmi", "train", "evaluate", "recommend",
                                  "experiment"});
        std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        nlohmann::json err = {{"error", {{"type", "cli_error"}, {"message", e.what()}}}};
        std::cerr << err.dump() << '\n';
        return e.get_exit_code();
    } catch (const cemf::Error& e) {
        nlohmann::json err = {{"error", {{"type", e.kind()}, {"message", e.what()}}}};
        std::cerr << err.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err = {{"error", {{"type", "error"}, {"message", e.what()}}}};
        std::cerr << err.dump() << '\n';
        return 1;
    }
    return 0;
}
