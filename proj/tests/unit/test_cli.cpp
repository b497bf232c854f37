#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "ddt/checkpoint.hpp"
#include "ddt/sharesched.hpp"

using namespace ddt;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result ddt_run(std::vector<std::string> args) {
    args.insert(args.begin(), "ddt");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("ddt_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read(const fs::path& p) { return cli::read_file(p); }

std::vector<std::vector<double>> read_csv(const fs::path& p, bool header) {
    std::istringstream in(read(p));
    std::string line;
    if (header) std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

// Shared trained checkpoint for the sampling and planning cases.
const fs::path& trained_checkpoint() {
    static const fs::path path = [] {
        fs::path dir = scratch("shared");
        cli::write_atomic(dir / "cfg.txt", "preset=desk\nseed=5\nsteps=30\nbatch=8\nlr=0.001\n");
        auto r = ddt_run({"train", "--config", (dir / "cfg.txt").string(), "--out", (dir / "run").string()});
        REQUIRE(r.code == 0);
        return dir / "run" / "checkpoint.ddt";
    }();
    return path;
}

}  // namespace

TEST_CASE("git blob checksums") {
    CHECK(cli::git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(cli::git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("atomic writes leave no temporaries") {
    fs::path dir = scratch("atomic");
    cli::write_atomic(dir / "a" / "b.txt", "one");
    cli::write_atomic(dir / "a" / "b.txt", "two");
    CHECK(read(dir / "a" / "b.txt") == "two");
    CHECK_FALSE(fs::exists(dir / "a" / "b.txt.tmp"));
}

TEST_CASE("training is reproducible and resumable") {
    fs::path dir = scratch("train");
    cli::write_atomic(dir / "cfg.txt", "preset=desk\nseed=3\nsteps=12\nbatch=4\nlr=0.001\n");
    const std::string cfg = (dir / "cfg.txt").string();
    REQUIRE(ddt_run({"train", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
    REQUIRE(ddt_run({"train", "--config", cfg, "--out", (dir / "b").string()}).code == 0);
    CHECK(cli::git_blob_sha1(read(dir / "a" / "checkpoint.ddt")) ==
          cli::git_blob_sha1(read(dir / "b" / "checkpoint.ddt")));
    CHECK(read(dir / "a" / "manifest.txt").find(cli::git_blob_sha1(read(dir / "cfg.txt"))) != std::string::npos);

    // Stop at step 6, resume to 12: same bytes as the straight run.
    REQUIRE(ddt_run({"train", "--config", cfg, "--steps", "6", "--out", (dir / "c").string()}).code == 0);
    REQUIRE(ddt_run({"train", "--config", cfg, "--resume", (dir / "c" / "checkpoint.ddt").string(), "--out",
                     (dir / "c").string()})
                .code == 0);
    CHECK(read(dir / "c" / "checkpoint.ddt") == read(dir / "a" / "checkpoint.ddt"));
    CHECK(read(dir / "c" / "metrics.csv") == read(dir / "a" / "metrics.csv"));
    const auto rows = read_csv(dir / "c" / "metrics.csv", true);
    REQUIRE(rows.size() == 12);
    double avg = 0;
    for (std::size_t i = 0; i < 6; ++i) avg += rows[i][1] / 6.0;
    CHECK(rows[6][1] < 2.0 * avg);
}

TEST_CASE("alignment weight zero still reports the encoder loss") {
    fs::path dir = scratch("w0");
    cli::write_atomic(dir / "cfg.txt", "preset=desk\nsteps=3\nbatch=4\nalignment_weight=0\n");
    REQUIRE(ddt_run({"train", "--config", (dir / "cfg.txt").string(), "--out", dir.string()}).code == 0);
    for (const auto& row : read_csv(dir / "metrics.csv", true)) {
        CHECK(row[2] > 0.0);
        CHECK(row[3] == row[1]);
    }
}

TEST_CASE("usage errors name the field") {
    fs::path dir = scratch("usage");
    cli::write_atomic(dir / "cfg.txt", "batch=0\n");
    auto r = ddt_run({"train", "--config", (dir / "cfg.txt").string(), "--out", dir.string()});
    CHECK(r.code == cli::kUsage);
    CHECK(r.err.find("batch") != std::string::npos);
    CHECK(ddt_run({"train"}).code == cli::kUsage);
    CHECK(ddt_run({"bogus"}).code == cli::kUsage);
    CHECK(ddt_run({"train", "--config", (dir / "missing.txt").string(), "--out", dir.string()}).code == cli::kData);
}

TEST_CASE("sampling equivalences and accounting") {
    const std::string ck = trained_checkpoint().string();
    fs::path dir = scratch("sample");
    auto sample = [&](const std::string& name, std::vector<std::string> extra) {
        std::vector<std::string> args{"sample", "--checkpoint", ck, "--samples", "6", "--seed", "9", "--out",
                                      (dir / name).string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return ddt_run(args);
    };
    REQUIRE(sample("plain", {"--steps", "8"}).code == 0);
    REQUIRE(ddt_run({"plan", "--checkpoint", ck, "--steps", "8", "--K", "8", "--strategy", "uniform", "--out",
                     (dir / "full_plan.txt").string()})
                .code == 0);
    REQUIRE(sample("planned", {"--steps", "8", "--plan", (dir / "full_plan.txt").string()}).code == 0);
    CHECK(read(dir / "plain" / "samples.ddt") == read(dir / "planned" / "samples.ddt"));

    REQUIRE(sample("neutral", {"--steps", "8", "--cfg-w", "1", "--cfg-interval", "0.3", "1"}).code == 0);
    CHECK(read(dir / "plain" / "samples.ddt") == read(dir / "neutral" / "samples.ddt"));

    REQUIRE(sample("again", {"--steps", "8"}).code == 0);
    CHECK(read(dir / "plain" / "samples.ddt") == read(dir / "again" / "samples.ddt"));
    CHECK(read(dir / "plain" / "eval.txt") == read(dir / "again" / "eval.txt"));

    auto r = sample("shared", {"--steps", "50", "--share-ratio", "0.75", "--strategy", "dp", "--probe-samples", "4"});
    REQUIRE(r.code == 0);
    const auto kv = parse_key_values(read(dir / "shared" / "eval.txt"));
    CHECK(kv_int(kv, "nfe_encoder") == 13);
    CHECK(kv_int(kv, "nfe_decoder") == 50);
    CHECK(kv_double(kv, "mmd") >= 0.0);
    CHECK(parse_plan(read(dir / "shared" / "plan.txt")).k == 13);

    auto g = sample("guided", {"--steps", "10", "--share-ratio", "0.5", "--strategy", "uniform", "--cfg-w", "2"});
    REQUIRE(g.code == 0);
    const auto gk = parse_key_values(read(dir / "guided" / "eval.txt"));
    CHECK(kv_int(gk, "nfe_encoder") == 10);
    CHECK(kv_int(gk, "nfe_decoder") == 20);

    CHECK(sample("mismatch", {"--steps", "9", "--plan", (dir / "full_plan.txt").string()}).code == cli::kData);
    CHECK(sample("badsolver", {"--solver", "rk4"}).code == cli::kUsage);
    CHECK(sample("badcfg", {"--cfg-interval", "0.8", "0.2", "--cfg-w", "2"}).code == cli::kUsage);
}

TEST_CASE("corrupt and non-finite checkpoints") {
    fs::path dir = scratch("broken");
    cli::write_atomic(dir / "junk.ddt", "not a checkpoint");
    CHECK(ddt_run({"sample", "--checkpoint", (dir / "junk.ddt").string(), "--out", dir.string()}).code == cli::kData);

    Checkpoint ck = deserialize_checkpoint(read(trained_checkpoint()));
    for (auto& [name, t] : ck.blocks) {
        if (name == "final.linear.w" || name == "final.ada.b") {
            t = Tensor::full(t.shape(), 1e300);
        }
    }
    cli::write_atomic(dir / "huge.ddt", serialize_checkpoint(ck));
    auto r = ddt_run({"sample", "--checkpoint", (dir / "huge.ddt").string(), "--steps", "4", "--out",
                      (dir / "out").string()});
    CHECK(r.code == cli::kNumerical);
    CHECK(r.err.find("step") != std::string::npos);
}

TEST_CASE("planning from probes and files") {
    const std::string ck = trained_checkpoint().string();
    fs::path dir = scratch("plan");
    auto plan = [&](const std::string& strategy, const std::string& out, std::vector<std::string> src) {
        std::vector<std::string> args{"plan", "--K", "4", "--strategy", strategy, "--out", (dir / out).string()};
        args.insert(args.end(), src.begin(), src.end());
        return ddt_run(args);
    };
    REQUIRE(plan("dp", "dp.txt", {"--checkpoint", ck, "--steps", "10", "--probe-samples", "4", "--similarity-out",
                                  (dir / "s.txt").string()})
                .code == 0);
    const std::string s = (dir / "s.txt").string();
    REQUIRE(plan("bruteforce", "bf.txt", {"--similarity", s}).code == 0);
    REQUIRE(plan("uniform", "uni.txt", {"--similarity", s}).code == 0);
    const SharingPlan dp = parse_plan(read(dir / "dp.txt")), bf = parse_plan(read(dir / "bf.txt")),
                      uni = parse_plan(read(dir / "uni.txt"));
    CHECK(dp.utility == bf.utility);
    CHECK(dp.anchors == bf.anchors);
    CHECK(dp.utility >= uni.utility);
    CHECK(std::isfinite(uni.utility));

    SimilarityMatrix six(6, 1.0);
    cli::write_atomic(dir / "six.txt", format_similarity(six));
    REQUIRE(ddt_run({"plan", "--similarity", (dir / "six.txt").string(), "--K", "3", "--strategy", "uniform", "--out",
                     (dir / "u6.txt").string()})
                .code == 0);
    CHECK(read(dir / "u6.txt").find("anchors=0 2 4\n") != std::string::npos);
    CHECK(ddt_run({"plan", "--similarity", (dir / "six.txt").string(), "--K", "7", "--out", (dir / "x.txt").string()})
              .code == cli::kUsage);
    CHECK(ddt_run({"plan", "--similarity", (dir / "six.txt").string(), "--K", "0", "--out", (dir / "x.txt").string()})
              .code == cli::kUsage);
    cli::write_atomic(dir / "asym.txt", "2\n1 0.5\n0.2 1\n");
    CHECK(ddt_run({"plan", "--similarity", (dir / "asym.txt").string(), "--K", "1", "--out", (dir / "x.txt").string()})
              .code == cli::kData);
}

TEST_CASE("diagnostics") {
    fs::path dir = scratch("diag");
    REQUIRE(ddt_run({"diagnose", "--dataset", "bands", "--t", "0.3", "0.8", "--out", dir.string()}).code == 0);
    for (const char* name : {"spectrum_t0.300.csv", "spectrum_t0.800.csv"}) {
        const auto rows = read_csv(dir / name, true);
        CHECK(rows.size() == 10);
        for (const auto& row : rows) CHECK(row[3] == doctest::Approx(row[2]).epsilon(0.05));
    }
    fs::path d2 = scratch("diag2");
    REQUIRE(ddt_run({"diagnose", "--checkpoint", trained_checkpoint().string(), "--t", "0.5", "--draws", "256",
                     "--steps", "6", "--probe-samples", "4", "--out", d2.string()})
                .code == 0);
    const auto s = read_csv(d2 / "similarity.csv", false);
    REQUIRE(s.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(s[i][i] == doctest::Approx(1.0).epsilon(1e-9));
        for (std::size_t j = 0; j < 6; ++j) CHECK(s[i][j] == s[j][i]);
    }
    CHECK(ddt_run({"diagnose", "--dataset", "mnist", "--out", dir.string()}).code == cli::kUsage);
    CHECK(ddt_run({"diagnose", "--out", dir.string()}).code == cli::kUsage);
}
