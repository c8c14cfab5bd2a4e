#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

struct CommandResult {
    int exit_code = -1;
    std::string output;
};

// Runs the CLI through /bin/sh; env_prefix (e.g. "TRACER_OUT=/x") lands
// before the binary so the variable applies to the process.
CommandResult run(const std::string& args, const std::string& env_prefix = "") {
    std::string cmd;
    if (!env_prefix.empty()) cmd += env_prefix + " ";
    cmd += std::string(TRACER_CLI_PATH) + " " + args + " 2>&1";
    std::FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CommandResult r;
    std::array<char, 512> chunk{};
    while (std::fgets(chunk.data(), chunk.size(), pipe)) r.output += chunk.data();
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("tracer-cli-" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("fit on a separable world promotes with exit 0") {
    TempDir dir;
    const auto synth = run("synth --classes 5 --dim 8 --sep 8 --noise 0 --per-day 400 --days 1 "
                           "--seed 31 --out-file " + (dir / "w.jsonl"));
    REQUIRE(synth.exit_code == 0);

    const auto fit = run("fit --traces " + (dir / "w.jsonl") + " --alpha 0.80 --seed 31 "
                         "--epochs 100 --out " + (dir / "run"));
    CHECK(fit.exit_code == 0);
    CHECK(fit.output.find("Promoted: global, cov=1.000") != std::string::npos);
    CHECK(fs::exists(dir / "run/state.json"));
    CHECK(fs::exists(dir / "run/report_v1.json"));
    CHECK(fs::exists(dir / "run/report_v1.txt"));
    CHECK(fs::exists(dir / "run/runlog.jsonl"));
    CHECK(fs::exists(dir / "run/buffer.jsonl"));
}

TEST_CASE("fit on a refusal world exits 2 and writes a verdict stub") {
    TempDir dir;
    run("synth --classes 3 --dim 8 --sep 0 --noise 0 --per-day 600 --days 1 --seed 17 "
        "--out-file " + (dir / "r.jsonl"));
    const auto fit = run("fit --traces " + (dir / "r.jsonl") + " --alpha 0.85 --seed 17 "
                         "--epochs 100 --out " + (dir / "run"));
    CHECK(fit.exit_code == 2);
    CHECK(fit.output.find("Refused") != std::string::npos);

    std::ifstream report(dir / "run/report_v1.json");
    REQUIRE(report.good());
    std::string body((std::istreambuf_iterator<char>(report)), std::istreambuf_iterator<char>());
    CHECK(body.find("\"promoted\": false") != std::string::npos);
    CHECK(body.find("slices") == std::string::npos);  // stub only
}

TEST_CASE("an empty trace file is a usage error with exit 1") {
    TempDir dir;
    std::ofstream(dir / "empty.jsonl").close();
    const auto fit = run("fit --traces " + (dir / "empty.jsonl") + " --out " + (dir / "run"));
    CHECK(fit.exit_code == 1);
    CHECK(fit.output.find("error") != std::string::npos);
}

TEST_CASE("a malformed trace file reports the offending line") {
    TempDir dir;
    {
        std::ofstream out(dir / "bad.jsonl");
        out << R"({"id":"a","embedding":[1,2],"teacher_label":"x","day":1})" << "\n";
        out << "this is not json\n";
    }
    const auto fit = run("fit --traces " + (dir / "bad.jsonl") + " --out " + (dir / "run"));
    CHECK(fit.exit_code == 1);
    CHECK(fit.output.find(":2:") != std::string::npos);
}

TEST_CASE("update refits from scratch and bumps the version") {
    TempDir dir;
    run("synth --classes 4 --dim 8 --sep 8 --noise 0.02 --per-day 300 --days 2 --seed 23 "
        "--out-file " + (dir / "all.jsonl") + " --with-test " + (dir / "test.jsonl"));

    // Split the two days into separate files.
    std::ifstream in(dir / "all.jsonl");
    std::ofstream day1(dir / "day1.jsonl"), day2(dir / "day2.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        if (line.find("\"day\":1") != std::string::npos) day1 << line << "\n";
        else day2 << line << "\n";
    }
    day1.close();
    day2.close();

    const auto fit = run("fit --traces " + (dir / "day1.jsonl") + " --alpha 0.80 --seed 23 "
                         "--epochs 100 --out " + (dir / "run"));
    REQUIRE(fit.exit_code == 0);
    const auto update = run("update --traces " + (dir / "day2.jsonl") + " --alpha 0.80 "
                            "--seed 23 --epochs 100 --out " + (dir / "run"));
    CHECK(update.exit_code == 0);
    CHECK(update.output.find("version=2") != std::string::npos);
    CHECK(fs::exists(dir / "run/report_v2.json"));

    // Evaluate on the fresh test partition: label indices must line up with
    // the stored model's snapshot, so GT accuracy lands near the true ~0.98
    // separability of this world, not at chance.
    const auto eval = run("eval --traces " + (dir / "test.jsonl") + " --out " + (dir / "run"));
    CHECK(eval.exit_code == 0);
    CHECK(eval.output.find("coverage") != std::string::npos);
    const auto parsed = nlohmann::json::parse(eval.output);
    REQUIRE(!parsed["gt_accuracy"].is_null());
    CHECK(parsed["gt_accuracy"].get<double>() > 0.9);

    const auto report = run("report --out " + (dir / "run"));
    CHECK(report.exit_code == 0);
    CHECK(report.output.find("Routing report v2") != std::string::npos);
}

TEST_CASE("sweep prints one row per alpha with non-increasing coverage") {
    TempDir dir;
    run("synth --classes 5 --dim 8 --sep 8 --noise 0.02 --per-day 250 --days 2 --seed 15 "
        "--out-file " + (dir / "w.jsonl") + " --with-test " + (dir / "t.jsonl"));

    const auto sweep = run("sweep --traces " + (dir / "w.jsonl") + " --test " + (dir / "t.jsonl") +
                           " --alphas 0.80,0.90 --seed 15 --epochs 100 --out " + (dir / "run"));
    CHECK(sweep.exit_code == 0);
    CHECK(sweep.output.find("alpha,cov,ta,gt_acc,baseline_cov,baseline_ta") != std::string::npos);
    CHECK(fs::exists(dir / "run/sweep.csv"));
    CHECK(fs::exists(dir / "run/sweep.json"));

    // Parse the two coverage values and check the ordering.
    std::istringstream lines(sweep.output);
    std::string line;
    std::vector<double> coverages;
    while (std::getline(lines, line)) {
        if (line.rfind("0.80,", 0) == 0 || line.rfind("0.90,", 0) == 0) {
            const auto first_comma = line.find(',');
            const auto second_comma = line.find(',', first_comma + 1);
            coverages.push_back(
                std::stod(line.substr(first_comma + 1, second_comma - first_comma - 1)));
        }
    }
    REQUIRE(coverages.size() == 2);
    CHECK(coverages[0] >= coverages[1]);
}

TEST_CASE("a refusal world sweeps to all-zero coverage rows") {
    TempDir dir;
    run("synth --classes 3 --dim 8 --sep 0 --noise 0 --per-day 500 --days 1 --seed 3 "
        "--out-file " + (dir / "r.jsonl") + " --with-test " + (dir / "rt.jsonl"));
    const auto sweep = run("sweep --traces " + (dir / "r.jsonl") + " --test " + (dir / "rt.jsonl") +
                           " --alphas 0.85,0.90 --seed 3 --epochs 80 --out " + (dir / "run"));
    CHECK(sweep.exit_code == 0);
    std::istringstream lines(sweep.output);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
        if (line.rfind("0.8", 0) == 0 || line.rfind("0.9", 0) == 0) {
            ++rows;
            CHECK(line.find(",0.0000,") != std::string::npos);
        }
    }
    CHECK(rows == 2);
}

TEST_CASE("environment variables override flags") {
    TempDir dir;
    run("synth --classes 3 --dim 6 --sep 8 --noise 0 --per-day 200 --days 1 --seed 9 "
        "--out-file " + (dir / "w.jsonl"));
    const auto fit = run("fit --traces " + (dir / "w.jsonl") + " --alpha 0.5 --seed 9 "
                         "--epochs 60 --out " + (dir / "flag-run"),
                         "TRACER_OUT=" + (dir / "env-run"));
    CHECK(fit.exit_code == 0);
    CHECK(fs::exists(dir / "env-run/state.json"));
    CHECK_FALSE(fs::exists(dir / "flag-run/state.json"));
}
