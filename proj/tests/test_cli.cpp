#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "test_support.hpp"

using namespace procgt::testing;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
    static int call = 0;
    const fs::path out_f = dir / ("stdout_" + std::to_string(call) + ".txt");
    const fs::path err_f = dir / ("stderr_" + std::to_string(call) + ".txt");
    ++call;
    const std::string cmd = std::string("\"") + PROCGT_CLI_PATH + "\" " + args + " > \"" +
                            out_f.string() + "\" 2> \"" + err_f.string() + "\"";
    const int status = std::system(cmd.c_str());
    CliResult r;
    if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
    r.out = read_text(out_f);
    r.err = read_text(err_f);
    return r;
}

// Generates the bundled two-variant log into dir/synth and returns the csv path.
std::string make_synth_log(const fs::path& dir) {
    const fs::path out = dir / "synth";
    const CliResult r =
        run_cli("synth --traces 12 --length 5 --out \"" + out.string() + "\"", dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return (out / "log.csv").string();
}

} // namespace

TEST_CASE("synth writes the log, schema, and manifest") {
    auto dir = scratch_dir("cli_synth");
    const CliResult r =
        run_cli("synth --traces 12 --length 5 --out \"" + (dir / "o").string() + "\"", dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("12 cases") != std::string::npos);
    CHECK(fs::exists(dir / "o" / "log.csv"));
    CHECK(fs::exists(dir / "o" / "schema.json"));
    CHECK(fs::exists(dir / "o" / "manifest.json"));
    // header plus one row per event
    const std::string csv = read_text(dir / "o" / "log.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 12 * 5);
}

TEST_CASE("convert emits the dataset and is reproducible byte for byte") {
    auto dir = scratch_dir("cli_convert");
    const std::string log = make_synth_log(dir);

    const std::string args = "convert --log \"" + log + "\" --seed 5 --out \"";
    const CliResult a = run_cli(args + (dir / "a").string() + "\"", dir);
    REQUIRE_MESSAGE(a.code == 0, a.err);
    CHECK(fs::exists(dir / "a" / "dataset.jsonl"));
    CHECK(fs::exists(dir / "a" / "stats.json"));
    CHECK(fs::exists(dir / "a" / "split.json"));
    CHECK(fs::exists(dir / "a" / "manifest.json"));

    // 12 traces of length 5 contribute 3 prefixes each, plus the header line
    const std::string ds = read_text(dir / "a" / "dataset.jsonl");
    CHECK(std::count(ds.begin(), ds.end(), '\n') == 1 + 12 * 3);

    const CliResult b = run_cli(args + (dir / "b").string() + "\"", dir);
    REQUIRE(b.code == 0);
    CHECK(read_text(dir / "a" / "dataset.jsonl") == read_text(dir / "b" / "dataset.jsonl"));
    CHECK(read_text(dir / "a" / "stats.json") == read_text(dir / "b" / "stats.json"));
    CHECK(read_text(dir / "a" / "split.json") == read_text(dir / "b" / "split.json"));
}

TEST_CASE("train writes stats, metrics, checkpoint, and manifest") {
    auto dir = scratch_dir("cli_train");
    const std::string log = make_synth_log(dir);
    const fs::path out = dir / "run";
    const CliResult r = run_cli("train --log \"" + log + "\" --out \"" + out.string() +
                                    "\" --hidden 8 --layers 1 --heads 2 --d-pe 4 --d-se 4"
                                    " --epochs 4 --warmup 1 --batch-size 16 --seed 3",
                                dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("best validation L1") != std::string::npos);
    CHECK(fs::exists(out / "stats.json"));
    CHECK(fs::exists(out / "checkpoint.bin"));
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(fs::exists(out / "split.json"));

    const std::string metrics = read_text(out / "metrics.csv");
    CHECK(metrics.rfind("# manifest_hash=", 0) == 0);
    CHECK(metrics.find("epoch,train_loss,val_loss,lr\n") != std::string::npos);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 2 + 4);

    CHECK(read_text(out / "checkpoint.bin").rfind("PROCGTCK", 0) == 0);

    // a second run in the same directory reuses the stored split plan
    const std::string split_before = read_text(out / "split.json");
    const CliResult again = run_cli("train --log \"" + log + "\" --out \"" + out.string() +
                                        "\" --hidden 8 --layers 1 --heads 2 --d-pe 4 --d-se 4"
                                        " --epochs 4 --warmup 1 --batch-size 16 --seed 99",
                                    dir);
    REQUIRE(again.code == 0);
    CHECK(read_text(out / "split.json") == split_before);
}

TEST_CASE("evaluate produces the report and earliness table; report rereads them") {
    auto dir = scratch_dir("cli_evaluate");
    const std::string log = make_synth_log(dir);
    const fs::path out = dir / "eval";
    const CliResult r = run_cli("evaluate --log \"" + log + "\" --out \"" + out.string() +
                                    "\" --split holdout --folds 0.7 --hidden 8 --layers 1"
                                    " --heads 2 --d-pe 4 --d-se 4 --epochs 3 --warmup 1"
                                    " --batch-size 16 --seeds 1",
                                dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("model MAE") != std::string::npos);
    REQUIRE(fs::exists(out / "report.json"));
    REQUIRE(fs::exists(out / "earliness.csv"));

    const nlohmann::json j = nlohmann::json::parse(read_text(out / "report.json"));
    CHECK(j["runs"].size() == 1);
    CHECK(j["runs"][0]["model"].contains("mae_days"));
    CHECK(j["aggregate"].contains("dummy_mae_days"));
    CHECK(read_text(out / "earliness.csv").rfind("k,count,mae_days,within_p90\n", 0) == 0);

    const CliResult rep = run_cli("report --out \"" + out.string() + "\"", dir);
    CHECK(rep.code == 0);
    CHECK(rep.out.find("average case duration") != std::string::npos);
}

TEST_CASE("baseline evaluates the per-length means on the split") {
    auto dir = scratch_dir("cli_baseline");
    const std::string log = make_synth_log(dir);
    const fs::path out = dir / "base";
    const CliResult r = run_cli("baseline --log \"" + log + "\" --out \"" + out.string() +
                                    "\" --split cv --folds 3",
                                dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("baseline MAE") != std::string::npos);
    const nlohmann::json j = nlohmann::json::parse(read_text(out / "report.json"));
    CHECK(j["runs"].size() == 3);
    CHECK(j["aggregate"].contains("dummy_mae_days"));
    CHECK(fs::exists(out / "earliness.csv"));
}

TEST_CASE("failures exit with the documented codes and machine-readable lines") {
    auto dir = scratch_dir("cli_errors");

    // unparseable timestamp in the data: exit 2 with the error kind on stderr
    const fs::path bad = dir / "bad.csv";
    write_text(bad, "case_id,activity,timestamp\nc1,A,not-a-time\n");
    const CliResult data_err = run_cli(
        "convert --log \"" + bad.string() + "\" --out \"" + (dir / "o1").string() + "\"", dir);
    CHECK(data_err.code == 2);
    const nlohmann::json j = nlohmann::json::parse(data_err.err);
    CHECK(j["error"] == "UnparseableTimestamp");
    CHECK(j.contains("message"));

    // missing --log: usage error, exit 1
    const CliResult no_log =
        run_cli("convert --out \"" + (dir / "o2").string() + "\"", dir);
    CHECK(no_log.code == 1);
    CHECK(nlohmann::json::parse(no_log.err)["error"] == "Usage");

    // unknown flag and missing subcommand are usage errors too
    CHECK(run_cli("synth --bogus 1", dir).code == 1);
    CHECK(run_cli("", dir).code == 1);

    // unsupported format name
    const CliResult fmt = run_cli("convert --log \"" + bad.string() +
                                      "\" --format yaml --out \"" + (dir / "o3").string() + "\"",
                                  dir);
    CHECK(fmt.code == 1);
    CHECK(nlohmann::json::parse(fmt.err)["error"] == "Usage");

    // nonexistent input file
    const CliResult gone = run_cli("convert --log \"" + (dir / "nope.csv").string() +
                                       "\" --out \"" + (dir / "o4").string() + "\"",
                                   dir);
    CHECK(gone.code == 2);

    // fold index outside the split plan
    const std::string log = make_synth_log(dir);
    const CliResult fold = run_cli("convert --log \"" + log + "\" --fold 7 --out \"" +
                                       (dir / "o5").string() + "\"",
                                   dir);
    CHECK(fold.code == 1);
    CHECK(nlohmann::json::parse(fold.err)["error"] == "Usage");

    // report without a report.json
    const CliResult rep = run_cli("report --out \"" + (dir / "o6").string() + "\"", dir);
    CHECK(rep.code == 2);
    CHECK(nlohmann::json::parse(rep.err)["error"] == "Io");
}
