#include <cmath>
#include <fstream>

#include "doctest.h"
#include "nodule/error.hpp"
#include "nodule/random.hpp"
#include "nodule/volume.hpp"
#include "oracles.hpp"

using namespace nodule;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

Volume random_volume(std::array<int, 3> dims, Eigen::Vector3d spacing, std::uint64_t seed) {
    Rng rng(seed);
    Volume v(dims, spacing, Eigen::Vector3d(1.5, -2.0, 3.25), VolumeKind::intensity);
    for (auto& x : v.data) {
        x = static_cast<float>(std::round(uniform_real(rng, -1000.0, 400.0)));
    }
    return v;
}

}  // namespace

TEST_CASE("uchar file of ones reads as a 2x2x2 mask") {
    const auto dir = oracle::scratch_dir("vol_uchar");
    write_text(dir / "m.raw", std::string(8, '\x01'));
    write_text(dir / "m.mhd",
               "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\n"
               "ElementType = MET_UCHAR\nElementDataFile = m.raw\n");
    const Volume v = read_volume(dir / "m.mhd");
    CHECK(v.dims == std::array<int, 3>{2, 2, 2});
    CHECK(v.is_mask());
    CHECK(v.data == std::vector<float>(8, 1.0F));
    CHECK(v.origin == Eigen::Vector3d::Zero());
}

TEST_CASE("header errors") {
    const auto dir = oracle::scratch_dir("vol_bad");
    write_text(dir / "d.raw", std::string(8, '\0'));
    SUBCASE("NDims other than 3") {
        write_text(dir / "a.mhd",
                   "NDims = 2\nDimSize = 2 4\nElementSpacing = 1 1\nElementType = MET_UCHAR\nElementDataFile = d.raw\n");
        CHECK_THROWS_AS(read_volume(dir / "a.mhd"), FormatError);
    }
    SUBCASE("missing field") {
        write_text(dir / "b.mhd", "NDims = 3\nDimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = d.raw\n");
        CHECK_THROWS_AS(read_volume(dir / "b.mhd"), FormatError);
    }
    SUBCASE("unknown element type") {
        write_text(dir / "c.mhd",
                   "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nElementType = MET_DOUBLE\nElementDataFile = d.raw\n");
        CHECK_THROWS_AS(read_volume(dir / "c.mhd"), FormatError);
    }
    SUBCASE("data file too short") {
        write_text(dir / "e.mhd",
                   "NDims = 3\nDimSize = 2 2 3\nElementSpacing = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = d.raw\n");
        CHECK_THROWS_AS(read_volume(dir / "e.mhd"), TruncationError);
    }
    SUBCASE("unknown keys are tolerated") {
        write_text(dir / "f.mhd",
                   "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nFancyKey = 7\nElementType = MET_UCHAR\n"
                   "ElementDataFile = d.raw\n");
        CHECK(read_volume(dir / "f.mhd").voxel_count() == 8);
    }
}

TEST_CASE("short ramp and random volumes round-trip bit-exactly") {
    const auto dir = oracle::scratch_dir("vol_rt");
    Volume ramp({3, 3, 3}, Eigen::Vector3d(0.5, 0.75, 2.0), Eigen::Vector3d(-10, 5, 1), VolumeKind::intensity);
    for (int i = 0; i < 27; ++i) {
        ramp.data[i] = static_cast<float>(i);
    }
    write_volume(ramp, dir / "ramp.mhd");
    const Volume back = read_volume(dir / "ramp.mhd");
    CHECK(back.data == ramp.data);
    CHECK(back.spacing == ramp.spacing);
    CHECK(back.origin == ramp.origin);
    CHECK(back.element_type == ElementType::int16);

    for (const bool msb : {false, true}) {
        for (const ElementType t : {ElementType::int16, ElementType::float32}) {
            Volume v = random_volume({5, 4, 3}, Eigen::Vector3d(0.7, 0.7, 1.3), 11 + (msb ? 1 : 0));
            v.element_type = t;
            if (t == ElementType::float32) {
                for (auto& x : v.data) {
                    x += 0.125F;
                }
            }
            write_volume(v, dir / "r.mhd", WriteOptions{msb});
            const Volume r = read_volume(dir / "r.mhd");
            CHECK(r.data == v.data);
            CHECK(r.element_type == t);
        }
    }
}

TEST_CASE("resample_isotropic") {
    SUBCASE("dims follow ceil(d * s / t)") {
        const Volume v({4, 4, 4}, Eigen::Vector3d(1, 1, 2), Eigen::Vector3d::Zero(), VolumeKind::intensity, 0.0F);
        CHECK(resample_isotropic(v, 1.0).dims == std::array<int, 3>{4, 4, 8});
    }
    SUBCASE("constant stays constant") {
        const Volume v({5, 6, 3}, Eigen::Vector3d(0.8, 0.8, 2.5), Eigen::Vector3d(3, 1, -4), VolumeKind::intensity,
                       100.0F);
        for (const double t : {0.3, 1.0, 1.7}) {
            const Volume r = resample_isotropic(v, t);
            for (float x : r.data) {
                CHECK(x == doctest::Approx(100.0));
            }
        }
    }
    SUBCASE("ramp midpoints are neighbour means") {
        Volume v({6, 2, 2}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::intensity);
        for (int k = 0; k < 2; ++k) {
            for (int j = 0; j < 2; ++j) {
                for (int i = 0; i < 6; ++i) {
                    v.at(i, j, k) = static_cast<float>(7.0 * i);
                }
            }
        }
        const Volume r = resample_isotropic(v, 0.5);
        for (int i = 1; i + 1 < 2 * 5; i += 2) {
            const double left = v.at(i / 2, 0, 0);
            const double right = v.at(i / 2 + 1, 0, 0);
            CHECK(r.at(i, 0, 0) == doctest::Approx(0.5 * (left + right)).epsilon(1e-12));
        }
    }
    SUBCASE("same spacing returns the input") {
        const Volume v = random_volume({5, 5, 5}, Eigen::Vector3d::Constant(0.9), 3);
        const Volume r = resample_isotropic(v, 0.9);
        REQUIRE(r.dims == v.dims);
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            CHECK(std::abs(r.data[i] - v.data[i]) <= 1e-6);
        }
    }
    SUBCASE("mask output stays binary") {
        const Volume m = oracle::ellipsoid_mask({9, 9, 9}, Eigen::Vector3d(4, 4, 4), Eigen::Vector3d(3.5, 2.5, 3));
        Volume aniso = m;
        aniso.spacing = Eigen::Vector3d(0.6, 0.9, 1.7);
        const Volume r = resample_isotropic(aniso, 0.45);
        CHECK(r.is_mask());
        for (float x : r.data) {
            CHECK((x == 0.0F || x == 1.0F));
        }
    }
    SUBCASE("non-positive spacing") {
        const Volume v({2, 2, 2}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::intensity);
        CHECK_THROWS_AS(resample_isotropic(v, 0.0), ArgumentError);
        CHECK_THROWS_AS(resample_isotropic(v, -1.0), ArgumentError);
    }
}

TEST_CASE("trilinear_sample") {
    Volume v({3, 3, 3}, Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(10, 20, 30), VolumeKind::intensity, 0.0F);
    v.at(1, 1, 1) = 10.0F;
    v.at(2, 1, 1) = 0.0F;
    CHECK(trilinear_sample(v, v.physical(1, 1, 1)) == 10.0);
    CHECK(trilinear_sample(v, v.physical(1.5, 1, 1)) == doctest::Approx(5.0));
    CHECK(trilinear_sample(v, v.physical(-3, 1, 1)) == -1000.0);
    CHECK(trilinear_sample(v, v.physical(1, 1, 1), 7.0) == 10.0);
    CHECK(trilinear_sample(v, v.physical(1, 9, 1), 7.0) == 7.0);

    Volume m = oracle::empty_mask({2, 2, 2});
    CHECK(trilinear_sample(m, m.physical(5, 5, 5)) == 0.0);
}

TEST_CASE("trilinear_sample is Lipschitz in the neighbourhood range") {
    const Volume v = random_volume({6, 6, 6}, Eigen::Vector3d(0.7, 1.1, 1.9), 5);
    Rng rng(99);
    const double eps = 1e-3;
    const double min_spacing = v.spacing.minCoeff();
    for (int trial = 0; trial < 2000; ++trial) {
        const Eigen::Vector3d idx(uniform_real(rng, 0, 5), uniform_real(rng, 0, 5), uniform_real(rng, 0, 5));
        const PointMm p = v.physical(idx.x(), idx.y(), idx.z());
        const PointMm q = p + oracle::random_unit(rng) * eps * min_spacing;
        // p and q share at most two adjacent cells, so the 4x4x4 block around p bounds both.
        double lo = 1e300, hi = -1e300;
        const int i0 = static_cast<int>(idx.x()), j0 = static_cast<int>(idx.y()), k0 = static_cast<int>(idx.z());
        for (int k = std::max(k0 - 1, 0); k <= std::min(k0 + 2, 5); ++k) {
            for (int j = std::max(j0 - 1, 0); j <= std::min(j0 + 2, 5); ++j) {
                for (int i = std::max(i0 - 1, 0); i <= std::min(i0 + 2, 5); ++i) {
                    lo = std::min(lo, static_cast<double>(v.at(i, j, k)));
                    hi = std::max(hi, static_cast<double>(v.at(i, j, k)));
                }
            }
        }
        CHECK(std::abs(trilinear_sample(v, p) - trilinear_sample(v, q)) <= eps * 3.0 * (hi - lo) + 1e-9);
    }
}

TEST_CASE("mask helpers") {
    const Volume m = oracle::ellipsoid_mask({11, 11, 11}, Eigen::Vector3d(5, 5, 5), Eigen::Vector3d(3, 3, 3));
    CHECK(foreground_count(m) > 0);
    const PointMm c = mask_center_of_mass(m);
    CHECK((c - Eigen::Vector3d(5, 5, 5)).norm() < 1e-12);
    CHECK_THROWS_AS(mask_center_of_mass(oracle::empty_mask({3, 3, 3})), EmptyInputError);

    Volume bad = oracle::empty_mask({2, 2, 2});
    bad.data[0] = 0.5F;
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
}
