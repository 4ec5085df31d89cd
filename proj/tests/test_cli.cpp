// End-to-end checks of the cemf binary: every subcommand, error JSON on
// stderr, config-file handling and byte-level determinism across reruns.

#include "support/tmpdir.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

namespace {

const std::string kBin = CEMF_CLI_PATH;

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run(const testgen::TmpDir& tmp, const std::string& args) {
    auto out_path = tmp / "cmd_out.txt";
    auto err_path = tmp / "cmd_err.txt";
    std::string cmd = kBin + " " + args + " > " + out_path.string() + " 2> " + err_path.string();
    int status = std::system(cmd.c_str());
    int code = -1;
    if (status != -1 && WIFEXITED(status)) code = WEXITSTATUS(status);
    return {code, slurp(out_path), slurp(err_path)};
}

// 5 genres of 12 movies; each user rates 12 in-genre and 3 next-genre movies
// at 5.0 plus 2 below-threshold ones, deterministic
void write_ratings(const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "userId,movieId,rating,timestamp\n";
    for (int u = 0; u < 40; ++u) {
        int genre = u % 5;
        for (int q = 0; q < 12; ++q)
            out << u << ',' << (genre * 12 + (u + q) % 12) << ",5.0," << (1000 + u) << '\n';
        for (int q = 0; q < 3; ++q)
            out << u << ',' << (((genre + 1) % 5) * 12 + (u * 2 + q) % 12) << ",4.0,"
                << (2000 + u) << '\n';
        for (int q = 0; q < 2; ++q)
            out << u << ',' << ((u + q) % 60) << ",2.0," << (3000 + u) << '\n';
    }
}

}  // namespace

TEST_CASE("cli pipeline end to end") {
    testgen::TmpDir tmp("cli");
    auto ratings = tmp / "ratings.csv";
    write_ratings(ratings);
    const std::string split = (tmp / "split").string();

    auto prep = run(tmp, "prepare --dataset movielens --input " + ratings.string() + " --out " +
                             split + " --seed 3 --rating-threshold 4");
    INFO(prep.err);
    REQUIRE(prep.exit_code == 0);
    for (const char* f : {"train.tsv", "val.tsv", "test.tsv", "users.map", "items.map",
                          "manifest.json"})
        CHECK(std::filesystem::exists(tmp / "split" / f));
    auto manifest = nlohmann::json::parse(slurp(tmp / "split" / "manifest.json"));
    CHECK(manifest["results"]["n_users"] == 40);
    CHECK(manifest["results"]["nnz_val"].get<int>() > 0);

    const std::string sppmi_path = (tmp / "sppmi.tsv").string();
    auto spp = run(tmp, "sppmi --train " + split + "/train.tsv --k 1 --out " + sppmi_path);
    INFO(spp.err);
    REQUIRE(spp.exit_code == 0);
    CHECK(std::filesystem::exists(tmp / "sppmi.tsv"));
    CHECK(std::filesystem::exists(tmp / "sppmi.tsv.json"));
    auto spp_stats = nlohmann::json::parse(spp.out);
    CHECK(spp_stats["n_pairs"].get<int>() > 0);
    CHECK(spp_stats["log_base"] == "e");

    const std::string common = " --train " + split + "/train.tsv --d 4 --alpha 10 --iters 3";
    auto wmf = run(tmp, "train" + common + " --mode wmf --out " + (tmp / "model_wmf").string());
    INFO(wmf.err);
    REQUIRE(wmf.exit_code == 0);
    auto cemf_run = run(tmp, "train" + common + " --mode cemf --sppmi " + sppmi_path + " --out " +
                                 (tmp / "model_cemf").string());
    INFO(cemf_run.err);
    REQUIRE(cemf_run.exit_code == 0);
    CHECK(std::filesystem::exists(tmp / "model_cemf" / "X.bin"));
    CHECK(std::filesystem::exists(tmp / "model_cemf" / "model.json"));

    // cemf without --sppmi: machine-readable failure
    auto missing = run(tmp, "train" + common + " --mode cemf --out " + (tmp / "m2").string());
    CHECK(missing.exit_code != 0);
    auto err_json = nlohmann::json::parse(missing.err);
    CHECK(err_json["error"].contains("message"));

    auto eval = run(tmp, "evaluate --model " + (tmp / "model_cemf").string() + " --train " +
                             split + "/train.tsv --test " + split + "/test.tsv --val " + split +
                             "/val.tsv --n 2,5 --out " + (tmp / "report.json").string());
    INFO(eval.err);
    REQUIRE(eval.exit_code == 0);
    auto report = nlohmann::json::parse(slurp(tmp / "report.json"));
    CHECK(report["results"]["overall"].size() == 2);
    CHECK(std::filesystem::exists(tmp / "report.csv"));

    auto recs = run(tmp, "recommend --model " + (tmp / "model_cemf").string() + " --train " +
                             split + "/train.tsv --n 3 --users 0,1 --users-map " + split +
                             "/users.map --items-map " + split + "/items.map --out " +
                             (tmp / "recs.tsv").string());
    INFO(recs.err);
    REQUIRE(recs.exit_code == 0);
    auto recs_text = slurp(tmp / "recs.tsv");
    CHECK(std::count(recs_text.begin(), recs_text.end(), '\n') == 1 + 6);
    CHECK(recs_text.rfind("user\trank\titem\tscore\n", 0) == 0);
}

TEST_CASE("cli training is deterministic across reruns") {
    testgen::TmpDir tmp("cli_det");
    auto ratings = tmp / "ratings.csv";
    write_ratings(ratings);
    const std::string split = (tmp / "split").string();
    REQUIRE(run(tmp, "prepare --dataset movielens --input " + ratings.string() + " --out " +
                         split + " --seed 3 --rating-threshold 4")
                .exit_code == 0);
    const std::string common = "train --train " + split +
                               "/train.tsv --mode wmf --d 4 --alpha 10 --iters 3 --seed 7 --out ";
    REQUIRE(run(tmp, common + (tmp / "m1").string() + " --threads 1").exit_code == 0);
    REQUIRE(run(tmp, common + (tmp / "m2").string() + " --threads 4").exit_code == 0);
    CHECK(slurp(tmp / "m1" / "X.bin") == slurp(tmp / "m2" / "X.bin"));
    CHECK(slurp(tmp / "m1" / "Y.bin") == slurp(tmp / "m2" / "Y.bin"));
}

TEST_CASE("cli reads JSON configs and flags override them") {
    testgen::TmpDir tmp("cli_cfg");
    auto ratings = tmp / "ratings.csv";
    write_ratings(ratings);
    const std::string split = (tmp / "split").string();
    REQUIRE(run(tmp, "prepare --dataset movielens --input " + ratings.string() + " --out " +
                         split + " --seed 3 --rating-threshold 4")
                .exit_code == 0);

    nlohmann::json cfg = {{"train", split + "/train.tsv"}, {"mode", "wmf"}, {"d", 4},
                          {"alpha", 10.0},                 {"iters", 3},    {"seed", 7}};
    {
        std::ofstream out(tmp / "train.json");
        out << cfg.dump(2);
    }
    REQUIRE(run(tmp, "train --config " + (tmp / "train.json").string() + " --out " +
                         (tmp / "mc1").string())
                .exit_code == 0);
    auto mj = nlohmann::json::parse(slurp(tmp / "mc1" / "model.json"));
    CHECK(mj["hyperparams"]["alpha"] == 10.0);

    // flag wins over the config value
    REQUIRE(run(tmp, "train --config " + (tmp / "train.json").string() + " --alpha 2 --out " +
                         (tmp / "mc2").string())
                .exit_code == 0);
    auto mj2 = nlohmann::json::parse(slurp(tmp / "mc2" / "model.json"));
    CHECK(mj2["hyperparams"]["alpha"] == 2.0);

    // a manifest written by prepare reproduces the split via --config
    REQUIRE(run(tmp, "prepare --config " + split + "/manifest.json --out " +
                         (tmp / "split2").string())
                .exit_code == 0);
    CHECK(slurp(tmp / "split" / "train.tsv") == slurp(tmp / "split2" / "train.tsv"));
}

TEST_CASE("cli experiment runs a small grid") {
    testgen::TmpDir tmp("cli_exp");
    auto ratings = tmp / "ratings.csv";
    write_ratings(ratings);
    auto res = run(tmp, "experiment --dataset movielens --input " + ratings.string() + " --out " +
                            (tmp / "exp").string() +
                            " --rating-threshold 4 --seeds 3 --d 4 --alpha 5,40 --iters 3 "
                            "--n 2,5,10");
    INFO(res.err);
    REQUIRE(res.exit_code == 0);
    auto summary = nlohmann::json::parse(slurp(tmp / "exp" / "summary.json"));
    CHECK(summary["seeds"]["3"]["wmf"]["4"].contains("best_alpha"));
    CHECK(summary["seeds"]["3"]["cemf"]["4"].contains("test"));
    CHECK(summary.contains("comparison"));
}

TEST_CASE("cli failures are machine readable") {
    testgen::TmpDir tmp("cli_err");
    auto missing_flag = run(tmp, "prepare --dataset movielens");
    CHECK(missing_flag.exit_code != 0);
    CHECK(nlohmann::json::parse(missing_flag.err)["error"]["type"] == "cli_error");

    auto ratings = tmp / "ratings.csv";
    write_ratings(ratings);
    auto bad_dataset = run(tmp, "prepare --dataset bogus --input " + ratings.string() +
                                    " --out " + (tmp / "x").string());
    CHECK(bad_dataset.exit_code != 0);
    auto j = nlohmann::json::parse(bad_dataset.err);
    CHECK(j["error"]["message"].get<std::string>().find("bogus") != std::string::npos);

    auto no_file = run(tmp, "sppmi --train " + (tmp / "nope.tsv").string() + " --out " +
                                (tmp / "s.tsv").string());
    CHECK(no_file.exit_code != 0);
    CHECK(nlohmann::json::parse(no_file.err)["error"]["type"] == "io_error");
}
