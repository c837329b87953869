#pragma once

// Independent reference computations and fixtures for the test suite. Nothing
// here calls the library routine it is meant to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "nodule/mesh.hpp"
#include "nodule/random.hpp"
#include "nodule/spherical_map.hpp"
#include "nodule/volume.hpp"

namespace oracle {

/// Real orthonormal harmonic from std::assoc_legendre, which carries no
/// Condon-Shortley phase. Normalisation uses lgamma so it stays finite to l ~ 50.
inline double real_sh(int l, int m, double theta, double phi) {
    const int am = std::abs(m);
    const double log_ratio = std::lgamma(l - am + 1.0) - std::lgamma(l + am + 1.0);
    const double n = std::sqrt((2.0 * l + 1.0) / (4.0 * M_PI) * std::exp(log_ratio));
    const double p = std::assoc_legendre(static_cast<unsigned>(l), static_cast<unsigned>(am), std::cos(theta));
    if (m == 0) {
        return n * p;
    }
    return std::sqrt(2.0) * n * p * (m > 0 ? std::cos(am * phi) : std::sin(am * phi));
}

inline Eigen::Vector3d random_unit(nodule::Rng& rng) {
    const double z = nodule::uniform_real(rng, -1.0, 1.0);
    const double a = nodule::uniform_real(rng, 0.0, 2.0 * M_PI);
    const double s = std::sqrt(1.0 - z * z);
    return {s * std::cos(a), s * std::sin(a), z};
}

/// Uniform random rotation from a normalised Gaussian quaternion.
inline Eigen::Matrix3d random_rotation(nodule::Rng& rng) {
    Eigen::Quaterniond q(nodule::standard_normal(rng), nodule::standard_normal(rng), nodule::standard_normal(rng),
                         nodule::standard_normal(rng));
    q.normalize();
    return q.toRotationMatrix();
}

/// Singular values of a 2x2 matrix from the closed form
/// sigma^2 = (|J|_F^2 +- sqrt(|J|_F^4 - 4 det^2)) / 2.
inline std::pair<double, double> singular_values_2x2(const Eigen::Matrix2d& j) {
    const double f = j.squaredNorm();
    const double det = j.determinant();
    const double disc = std::sqrt(std::max(0.0, f * f - 4.0 * det * det));
    return {std::sqrt((f + disc) / 2.0), std::sqrt(std::max(0.0, (f - disc) / 2.0))};
}

/// Orthonormal 2D coordinates of a triangle's second and third vertex relative to the first.
inline Eigen::Matrix2d triangle_frame(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
    const Eigen::Vector3d e1 = b - a;
    const Eigen::Vector3d e2 = c - a;
    const Eigen::Vector3d x = e1.normalized();
    const Eigen::Vector3d y = (e2 - e2.dot(x) * x).normalized();
    Eigen::Matrix2d m;
    m << e1.dot(x), e2.dot(x), e1.dot(y), e2.dot(y);
    return m;
}

/// Ratio of singular values of the linear map carrying each source triangle
/// onto its (flat) spherical image, one value per triangle.
inline std::vector<double> triangle_distortions(const nodule::TriMesh& m, std::span<const Eigen::Vector3d> p) {
    std::vector<double> out;
    for (const auto& t : m.triangles) {
        const Eigen::Matrix2d src = triangle_frame(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
        const Eigen::Matrix2d dst = triangle_frame(p[t[0]], p[t[1]], p[t[2]]);
        const auto [s1, s2] = singular_values_2x2(dst * src.inverse());
        out.push_back(s1 / s2);
    }
    return out;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares rotation R (Kabsch) with R * from[i] ~ to[i].
inline Eigen::Matrix3d kabsch(std::span<const Eigen::Vector3d> from, std::span<const Eigen::Vector3d> to) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < from.size(); ++i) {
        h += to[i] * from[i].transpose();
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Dirichlet energy re-summed triangle by triangle: each triangle adds
/// cot(angle) / 2 * |p_u - p_v|^2 for the edge opposite every corner. Edge
/// weights are floored the same way the library documents.
inline double dirichlet_energy_by_triangles(const nodule::TriMesh& m, std::span<const Eigen::Vector3d> p,
                                            double floor) {
    std::map<std::pair<int, int>, double> w;
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k], b = t[(k + 1) % 3], c = t[(k + 2) % 3];
            const Eigen::Vector3d u = m.vertices[b] - m.vertices[a];
            const Eigen::Vector3d v = m.vertices[c] - m.vertices[a];
            const double cot = u.dot(v) / u.cross(v).norm();
            w[{std::min(b, c), std::max(b, c)}] += 0.5 * cot;
        }
    }
    double e = 0.0;
    for (const auto& [edge, weight] : w) {
        e += std::max(weight, floor) * (p[edge.first] - p[edge.second]).squaredNorm();
    }
    return e;
}

/// Gini impurity as the fraction of ordered sample pairs with different labels.
inline double gini_pairs(const std::vector<int>& labels) {
    if (labels.empty()) {
        return 0.0;
    }
    long long differing = 0;
    for (int a : labels) {
        for (int b : labels) {
            differing += a != b ? 1 : 0;
        }
    }
    const double n = static_cast<double>(labels.size());
    return static_cast<double>(differing) / (n * n);
}

struct Welch {
    double t;
    double df;
};

/// Two-pass means and variances, then the textbook t and Welch-Satterthwaite df.
inline Welch welch_direct(const std::vector<double>& a, const std::vector<double>& b) {
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) {
            s += x;
        }
        return s / static_cast<double>(v.size());
    };
    auto var = [&](const std::vector<double>& v) {
        const double mu = mean(v);
        double s = 0.0;
        for (double x : v) {
            s += (x - mu) * (x - mu);
        }
        return s / static_cast<double>(v.size() - 1);
    };
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double qa = var(a) / na;
    const double qb = var(b) / nb;
    return {(mean(a) - mean(b)) / std::sqrt(qa + qb), (qa + qb) * (qa + qb) / (qa * qa / (na - 1) + qb * qb / (nb - 1))};
}

/// Icosphere whose radius is modulated by a few smooth random lobes; star-shaped,
/// so it stays a closed genus-zero surface.
inline nodule::TriMesh random_blob_mesh(std::uint64_t seed, int subdivisions = 4, double amplitude = 0.25) {
    nodule::Rng rng(seed);
    std::vector<std::pair<Eigen::Vector3d, double>> lobes;
    for (int i = 0; i < 5; ++i) {
        lobes.emplace_back(random_unit(rng), nodule::uniform_real(rng, 0.3, 1.0));
    }
    nodule::TriMesh m = nodule::make_icosphere(subdivisions);
    for (auto& v : m.vertices) {
        double r = 1.0;
        for (const auto& [dir, weight] : lobes) {
            r += amplitude * weight * std::exp(-2.0 * (1.0 - v.dot(dir)));
        }
        v *= r;
    }
    return m;
}

inline nodule::TriMesh ellipsoid_mesh(const Eigen::Vector3d& axes, int subdivisions = 4) {
    nodule::TriMesh m = nodule::make_icosphere(subdivisions);
    for (auto& v : m.vertices) {
        v = v.cwiseProduct(axes);
    }
    return m;
}

inline nodule::Volume empty_mask(std::array<int, 3> dims, Eigen::Vector3d spacing = Eigen::Vector3d::Ones()) {
    return nodule::Volume(dims, spacing, Eigen::Vector3d::Zero(), nodule::VolumeKind::mask, 0.0F);
}

/// Voxels whose centre satisfies sum(((p - c) / semi)^2) <= 1, in voxel units.
inline nodule::Volume ellipsoid_mask(std::array<int, 3> dims, const Eigen::Vector3d& center,
                                     const Eigen::Vector3d& semi) {
    nodule::Volume v = empty_mask(dims);
    for (int k = 0; k < dims[2]; ++k) {
        for (int j = 0; j < dims[1]; ++j) {
            for (int i = 0; i < dims[0]; ++i) {
                const Eigen::Vector3d d = (Eigen::Vector3d(i, j, k) - center).cwiseQuotient(semi);
                if (d.squaredNorm() <= 1.0) {
                    v.at(i, j, k) = 1.0F;
                }
            }
        }
    }
    return v;
}

inline nodule::Volume torus_mask(int n, double major, double minor) {
    nodule::Volume v = empty_mask({n, n, n});
    const double c = 0.5 * (n - 1);
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                const double x = i - c, y = j - c, z = k - c;
                const double q = std::hypot(x, y) - major;
                if (q * q + z * z <= minor * minor) {
                    v.at(i, j, k) = 1.0F;
                }
            }
        }
    }
    return v;
}

/// Fresh directory under the system temp dir, removed first if it exists.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("nodule_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace oracle
