// Runs the nodule_cli executable and checks exit codes and outputs.

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "nodule/eval.hpp"
#include "nodule/image_io.hpp"
#include "nodule/spharm.hpp"
#include "nodule/volume.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(NODULE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Labels file over the first `count` corpus records with the first `tori` masks swapped for a torus.
fs::path labels_with_tori(const fs::path& corpus, const std::string& name, int count, int tori) {
    auto records = nodule::read_labels_csv(corpus / "labels.csv");
    records.resize(count);
    const fs::path torus = corpus / "masks" / "torus.mhd";
    if (!fs::exists(torus)) {
        nodule::write_volume(oracle::torus_mask(30, 8.0, 3.0), torus);
    }
    for (int i = 0; i < tori; ++i) {
        records[i].mask_path = torus;
    }
    const fs::path out = corpus / name;
    nodule::write_labels_csv(out, records);
    return out;
}

std::size_t coefficient_rows(const fs::path& out) { return nodule::read_coefficients_csv(out / "shape" / "coefficients.csv").size(); }

}  // namespace

TEST_CASE("command line") {
    const fs::path dir = oracle::scratch_dir("cli");
    const fs::path corpus = dir / "corpus";
    const std::string fast = " --jobs 1 --log-level off";

    REQUIRE(run("synth --n 1 --seed 7 --out " + q(corpus) + fast) == 0);
    CHECK(nodule::read_labels_csv(corpus / "labels.csv").size() == 10u);

    SUBCASE("synth is reproducible") {
        REQUIRE(run("synth --n 1 --seed 7 --out " + q(dir / "again") + fast) == 0);
        CHECK(bytes(corpus / "labels.csv") == bytes(dir / "again" / "labels.csv"));
        CHECK(bytes(corpus / "masks" / "n0003_s2.raw") == bytes(dir / "again" / "masks" / "n0003_s2.raw"));
        CHECK(bytes(corpus / "volumes" / "n0004.raw") == bytes(dir / "again" / "volumes" / "n0004.raw"));
    }

    SUBCASE("usage and input errors exit 2") {
        CHECK(run("--help") == 0);
        CHECK(run("") == 2);
        CHECK(run("shape --bogus") == 2);
        CHECK(run("shape --labels " + q(dir / "missing.csv") + " --out " + q(dir / "o") + fast) == 2);
        CHECK(run("shape --out " + q(dir / "o") + fast) == 2);
    }

    SUBCASE("configuration errors exit 4") {
        std::ofstream(dir / "bad.json") << R"({"no_such_key": 1})";
        CHECK(run("--config " + q(dir / "bad.json") + " shape --labels " + q(corpus / "labels.csv") + fast) == 4);
        std::ofstream(dir / "range.json") << R"({"k_folds": 0})";
        CHECK(run("--config " + q(dir / "range.json") + " eval --labels " + q(corpus / "labels.csv") + fast) == 4);
    }

    SUBCASE("five valid records") {
        const fs::path labels = labels_with_tori(corpus, "five.csv", 5, 0);
        const fs::path out = dir / "five";
        CHECK(run("shape --labels " + q(labels) + " --out " + q(out) + fast) == 0);
        CHECK(coefficient_rows(out) == 5u);
        CHECK(run("patches --labels " + q(labels) + " --out " + q(out) + fast) == 0);
        for (const auto& r : nodule::read_labels_csv(labels)) {
            const auto img = nodule::read_png(out / "patches" / (r.id + "_rgb.png"));
            CHECK(img.width == 227);
            CHECK(img.height == 227);
        }
        const std::string first = bytes(out / "patches" / "n0001_s1_rgb.png");
        CHECK(run("patches --labels " + q(labels) + " --out " + q(out) + fast) == 0);
        CHECK(bytes(out / "patches" / "n0001_s1_rgb.png") == first);
    }

    SUBCASE("one torus among ten records is skipped") {
        const fs::path labels = labels_with_tori(corpus, "one_torus.csv", 10, 1);
        const fs::path out = dir / "torus";
        CHECK(run("shape --energy-trace --labels " + q(labels) + " --out " + q(out) + fast) == 0);
        CHECK(coefficient_rows(out) == 9u);
        CHECK(bytes(out / "shape" / "diagnostics.csv").find("n0001_s1,failed") != std::string::npos);
        CHECK(fs::exists(out / "shape" / "traces" / "n0001_s2_energy.csv"));
    }

    SUBCASE("more than 10% failures exit 3") {
        const fs::path labels = labels_with_tori(corpus, "two_tori.csv", 5, 2);
        CHECK(run("shape --labels " + q(labels) + " --out " + q(dir / "tori") + fast) == 3);
    }

    SUBCASE("train, predict and eval") {
        const fs::path labels = corpus / "labels.csv";
        const fs::path out = dir / "full";
        std::ofstream(dir / "small.json") << R"({"l_max": 6, "sh_counts": [9, 16], "k_folds": 3,
                                               "forest": {"n_trees": 20}})";
        const std::string common = " --config " + q(dir / "small.json") + " ";
        const std::string io = " --labels " + q(labels) + " --out " + q(out) + fast;
        REQUIRE(run(common + "shape" + io) == 0);
        REQUIRE(run(common + "patches" + io) == 0);
        REQUIRE(run(common + "features-baseline" + io) == 0);
        CHECK(run(common + "train --mode hybrid --n-sh 9" + io) == 0);
        CHECK(fs::exists(out / "model" / "forest.json"));
        CHECK(run(common + "predict --mode hybrid --n-sh 9" + io) == 0);
        CHECK(fs::exists(out / "predictions.csv"));
        CHECK(run(common + "predict --mode hybrid --n-sh 16" + io) == 4);
        CHECK(run(common + "train --mode sideways" + io) == 4);
        CHECK(run(common + "eval" + io) == 0);
        const std::string report = bytes(out / "eval" / "report.csv");
        CHECK(report.rfind("mode,n_sh,min_annot,fold,off_by_one,exact\n", 0) == 0);
        CHECK(run(common + "eval" + io) == 0);
        CHECK(bytes(out / "eval" / "report.csv") == report);
        CHECK(run(common + "eval --features " + q(dir / "nope.csv") + io) == 2);
    }
}
