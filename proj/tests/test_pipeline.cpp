#include <fstream>
#include <set>

#include "doctest.h"
#include "nodule/error.hpp"
#include "nodule/pipeline.hpp"
#include "nodule/synth.hpp"
#include "oracles.hpp"

using namespace nodule;

namespace {

std::string bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::set<std::string> coefficient_ids(const std::filesystem::path& p) {
    std::set<std::string> ids;
    for (const auto& [id, c] : read_coefficients_csv(p)) {
        ids.insert(id);
    }
    return ids;
}

// The first `count` records of a one-per-class corpus (10 records), with the
// first `tori` masks replaced by a genus-one shape.
std::vector<NoduleRecord> small_corpus(const std::filesystem::path& dir, int tori, int count = 5) {
    SynthOptions o;
    o.n_per_class = 1;
    o.seed = 3;
    auto records = write_corpus(o, dir, 1);
    records.resize(count);
    for (int t = 0; t < tori; ++t) {
        const auto path = dir / "masks" / ("torus" + std::to_string(t) + ".mhd");
        write_volume(oracle::torus_mask(30, 8.0, 3.0), path);
        records[t].mask_path = path;
    }
    return records;
}

PipelineConfig quick_config(const std::filesystem::path& out) {
    PipelineConfig c;
    c.output_dir = out;
    c.jobs = 1;
    c.forest.n_trees = 30;
    c.l_max = 8;
    c.sh_counts = {9, 25};
    c.image_px = 64;
    c.patch_px = 48;
    return c;
}

}  // namespace

TEST_CASE("config JSON") {
    const PipelineConfig c = config_from_json(R"({"l_max": 12, "forest": {"n_trees": 50}, "hu_window": [-900, 300],
                                                  "sh_counts": [10, 20], "seed": 5})");
    CHECK(c.l_max == 12);
    CHECK(c.forest.n_trees == 50);
    CHECK(c.hu_window.lo == -900.0);
    CHECK(c.sh_counts == std::vector<int>{10, 20});
    CHECK(c.seed == 5u);
    CHECK(c.k_folds == 10);

    const PipelineConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));

    CHECK_THROWS_AS(config_from_json(R"({"l_maxx": 3})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"forest": {"trees": 3}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"l_max": "big"})"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"k_folds": 1})").validate(), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"hu_window": [400, -1000]})").validate(), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"sh_counts": [500]})").validate(), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
    CHECK(parse_mode("hybrid") == Mode::hybrid);
    CHECK_THROWS_AS(parse_mode("both"), ConfigError);
}

TEST_CASE("shape from a ball mask") {
    const Volume ball = oracle::ellipsoid_mask({21, 21, 21}, Eigen::Vector3d(10, 10, 10), Eigen::Vector3d(7, 7, 7));
    PipelineConfig c;
    c.l_max = 10;
    const ShapeResult s = shape_from_mask(ball, c);
    CHECK(s.map.converged);
    CHECK(check_genus_zero(s.mesh));
    CHECK(s.rms_error < 0.1);
    // Centred on the mask centre of mass, so the degree-0 terms nearly vanish.
    for (int ch = 0; ch < 3; ++ch) {
        CHECK(std::abs(s.coeffs.at(ch, 0, 0)) < 0.05);
    }
    CHECK_THROWS_AS(shape_from_mask(oracle::torus_mask(30, 8.0, 3.0), c), TopologyError);
}

TEST_CASE("shape stage skips a torus-like mask") {
    const auto dir = oracle::scratch_dir("pipe_torus");
    const auto records = small_corpus(dir / "corpus", 1, 10);
    PipelineConfig c = quick_config(dir / "out");
    c.write_energy_traces = true;
    const StageStatus s = run_shape_stage(c, records);
    CHECK(s.total == 10);
    CHECK(s.failed == 1);
    CHECK_FALSE(s.excessive());
    const OutputLayout out{c.output_dir};
    const auto ids = coefficient_ids(out.coefficients());
    CHECK(ids.size() == 9u);
    CHECK(ids.count(records[0].id) == 0u);
    CHECK(bytes(out.shape_diagnostics()).find(records[0].id + ",failed") != std::string::npos);
    CHECK(std::filesystem::exists(out.traces_dir() / (records[1].id + "_energy.csv")));
}

TEST_CASE("excessive failures are reported") {
    StageStatus s{10, 1};
    CHECK_FALSE(s.excessive());
    s.failed = 2;
    CHECK(s.excessive());
}

TEST_CASE("patch stage skips an empty mask and is reproducible") {
    const auto dir = oracle::scratch_dir("pipe_patches");
    auto records = small_corpus(dir / "corpus", 0);
    const auto empty = dir / "corpus" / "masks" / "empty.mhd";
    write_volume(oracle::empty_mask({10, 10, 10}), empty);
    records[4].mask_path = empty;
    PipelineConfig c = quick_config(dir / "a");
    const StageStatus s = run_patches_stage(c, records);
    CHECK(s.failed == 1);
    const OutputLayout a{c.output_dir};
    CHECK_FALSE(std::filesystem::exists(a.patches_dir() / (records[4].id + "_rgb.png")));
    c.output_dir = dir / "b";
    run_patches_stage(c, records);
    for (int i = 0; i < 4; ++i) {
        const std::string name = records[i].id + "_rgb.png";
        CHECK(bytes(a.patches_dir() / name) == bytes(dir / "b" / "patches" / name));
        CHECK(read_png(a.patches_dir() / name).width == 64);
    }
}

TEST_CASE("train then predict on the training set") {
    const auto dir = oracle::scratch_dir("pipe_train");
    SynthOptions o;
    o.n_per_class = 2;
    o.seed = 5;
    const auto records = write_corpus(o, dir / "corpus", 1);
    PipelineConfig c = quick_config(dir / "out");
    REQUIRE(run_shape_stage(c, records).failed == 0);
    REQUIRE(run_patches_stage(c, records).failed == 0);
    REQUIRE(run_baseline_features_stage(c, records).failed == 0);

    const Forest f = run_train(c, records, Mode::hybrid, 9);
    CHECK(f.d == 27 + 108);
    const OutputLayout out{c.output_dir};
    REQUIRE(run_predict(c, records, Mode::hybrid, 9, out.forest()).failed == 0);
    std::ifstream in(out.predictions());
    std::string line;
    std::getline(in, line);
    std::vector<int> pred, truth;
    for (std::size_t i = 0; std::getline(in, line); ++i) {
        const auto a = line.find(','), b = line.find(',', a + 1);
        pred.push_back(std::stoi(line.substr(a + 1, b - a - 1)));
        truth.push_back(records[i].rating);
    }
    REQUIRE(pred.size() == records.size());
    CHECK(off_by_one_accuracy(pred, truth) == 1.0);

    CHECK_THROWS_AS(run_predict(c, records, Mode::hybrid, 16, out.forest()), ConfigError);
    CHECK_THROWS_AS(run_predict(c, records, Mode::shape_only, 9, out.forest()), ConfigError);

    // External features replace the baseline when given.
    std::ofstream ext(dir / "ext.csv");
    for (const auto& r : records) {
        ext << r.id << ',' << r.rating << ",0.5\n";
    }
    ext.close();
    c.external_features_csv = dir / "ext.csv";
    const auto app = load_appearance(c);
    CHECK(app.at(records[0].id).size() == 2u);
    const auto shape = load_shape(c);
    const auto hyb = mode_features(Mode::hybrid, 9, records[0].id, shape, app);
    REQUIRE(hyb.has_value());
    CHECK(hyb->size() == 27u + 2u);
    CHECK_FALSE(mode_features(Mode::shape_only, 9, "nobody", shape, app).has_value());
}
