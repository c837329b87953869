#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "nodule/error.hpp"
#include "nodule/features.hpp"
#include "nodule/random.hpp"
#include "oracles.hpp"

using namespace nodule;

namespace {

constexpr int kPer = kBaselinePerChannel;

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

RgbImage random_image(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    RgbImage img(w, h);
    for (auto& ch : img.channels) {
        for (auto& v : ch) {
            v = static_cast<std::uint8_t>(uniform_index(rng, 256));
        }
    }
    return img;
}

}  // namespace

TEST_CASE("baseline features of a black image") {
    const FeatureVector f = baseline_appearance(RgbImage(16, 16), "z");
    REQUIRE(f.values.size() == 108u);
    CHECK(f.id == "z");
    CHECK(f.source == FeatureSource::appearance_baseline);
    for (int c = 0; c < 3; ++c) {
        CHECK(f.values[c * kPer] == 1.0);
        for (int b = 1; b < kHistogramBins; ++b) {
            CHECK(f.values[c * kPer + b] == 0.0);
        }
        for (int k = 0; k < 4; ++k) {
            CHECK(f.values[c * kPer + kHistogramBins + k] == 0.0);
        }
    }
}

TEST_CASE("histograms are normalised") {
    const FeatureVector f = baseline_appearance(random_image(41, 29, 9));
    for (int c = 0; c < 3; ++c) {
        const double s = std::accumulate(f.values.begin() + c * kPer, f.values.begin() + c * kPer + kHistogramBins, 0.0);
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("checkerboard statistics") {
    RgbImage img(10, 10);
    for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) {
            img.at(0, x, y) = (x + y) % 2 == 0 ? 0 : 255;
        }
    }
    const FeatureVector f = baseline_appearance(img);
    CHECK(f.values[0] == doctest::Approx(0.5));
    CHECK(f.values[31] == doctest::Approx(0.5));
    CHECK(f.values[kHistogramBins] == doctest::Approx(127.5));
    CHECK(f.values[kHistogramBins + 1] == doctest::Approx(127.5));
    // Interior central differences of a checkerboard cancel exactly.
    CHECK(f.values[kPer] == 1.0);
}

TEST_CASE("gradient statistics of a horizontal ramp") {
    RgbImage img(20, 5);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 20; ++x) {
            img.at(1, x, y) = static_cast<std::uint8_t>(3 * x);
        }
    }
    const FeatureVector f = baseline_appearance(img);
    // Central and one-sided differences both give slope 3 everywhere.
    CHECK(f.values[kPer + kHistogramBins + 2] == doctest::Approx(3.0));
    CHECK(f.values[kPer + kHistogramBins + 3] == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("baseline features are deterministic and size-independent for constant images") {
    const RgbImage img = random_image(30, 30, 1);
    CHECK(baseline_appearance(img).values == baseline_appearance(img).values);
    RgbImage a(8, 8), b(50, 13);
    for (int c = 0; c < 3; ++c) {
        std::fill(a.channels[c].begin(), a.channels[c].end(), static_cast<std::uint8_t>(60 * c + 7));
        std::fill(b.channels[c].begin(), b.channels[c].end(), static_cast<std::uint8_t>(60 * c + 7));
    }
    CHECK(baseline_appearance(a).values == baseline_appearance(b).values);
    CHECK_THROWS_AS(baseline_appearance(RgbImage{}), ArgumentError);
}

TEST_CASE("external feature CSV") {
    const auto dir = oracle::scratch_dir("features");
    SUBCASE("two rows") {
        write_text(dir / "f.csv", "a,1,2\nb,3,4\n");
        const FeatureMap m = load_external_features(dir / "f.csv");
        REQUIRE(m.size() == 2u);
        CHECK(m.at("a").values == std::vector<double>{1, 2});
        CHECK(m.at("b").values == std::vector<double>{3, 4});
        CHECK(m.at("a").source == FeatureSource::appearance_external);
    }
    SUBCASE("malformed files") {
        write_text(dir / "ragged.csv", "a,1,2\nb,3,4,5\n");
        CHECK_THROWS_AS(load_external_features(dir / "ragged.csv"), FormatError);
        write_text(dir / "dup.csv", "a,1\na,2\n");
        CHECK_THROWS_AS(load_external_features(dir / "dup.csv"), FormatError);
        write_text(dir / "nan.csv", "a,1,x\n");
        CHECK_THROWS_AS(load_external_features(dir / "nan.csv"), FormatError);
        write_text(dir / "trail.csv", "a,1,2,\n");
        CHECK_THROWS_AS(load_external_features(dir / "trail.csv"), FormatError);
        CHECK_THROWS_AS(load_external_features(dir / "missing.csv"), IoError);
    }
    SUBCASE("4096-wide rows") {
        std::ostringstream row;
        row << "n1";
        for (int i = 0; i < 4096; ++i) {
            row << ',' << (i * 0.25);
        }
        row << '\n';
        write_text(dir / "wide.csv", row.str());
        const FeatureMap m = load_external_features(dir / "wide.csv");
        REQUIRE(m.at("n1").values.size() == 4096u);
        CHECK(m.at("n1").values[4095] == 4095 * 0.25);
    }
    SUBCASE("save then load is exact for 9-digit values") {
        Rng rng(6);
        std::vector<FeatureVector> rows;
        for (int r = 0; r < 20; ++r) {
            FeatureVector f{"id" + std::to_string(r), {}, FeatureSource::appearance_baseline};
            for (int i = 0; i < 50; ++i) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.9g", uniform_real(rng, -1e4, 1e4) * std::pow(10.0, r - 10));
                f.values.push_back(std::strtod(buf, nullptr));
            }
            rows.push_back(f);
        }
        save_features_csv(dir / "rt.csv", rows);
        const FeatureMap m = load_features_csv(dir / "rt.csv", FeatureSource::appearance_baseline);
        for (const auto& f : rows) {
            CHECK(m.at(f.id).values == f.values);
        }
    }
}

TEST_CASE("fuse") {
    const FeatureVector shape{"n1", std::vector<double>(300, 1.0), FeatureSource::shape_sh};
    const FeatureVector app{"n1", std::vector<double>(4096, 2.0), FeatureSource::appearance_external};
    const FeatureVector f = fuse(shape, app);
    CHECK(f.values.size() == 4396u);
    CHECK(f.values[299] == 1.0);
    CHECK(f.values[300] == 2.0);
    CHECK(f.source == FeatureSource::fused);
    const FeatureVector empty{"n1", {}, FeatureSource::shape_sh};
    CHECK(fuse(empty, app).values == app.values);
    CHECK(fuse(shape, empty).values == shape.values);
    const FeatureVector c{"n1", {7.0, 8.0}, FeatureSource::appearance_baseline};
    CHECK(fuse(fuse(shape, app), c).values == fuse(shape, fuse(app, c)).values);
    CHECK_THROWS_AS(fuse(shape, FeatureVector{"n2", {1.0}, FeatureSource::shape_sh}), ArgumentError);
}
