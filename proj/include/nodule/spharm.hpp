#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nodule/mesh.hpp"
#include "nodule/spherical_map.hpp"

namespace nodule {

inline constexpr int kDefaultLMax = 20;
inline constexpr double kFitDamping = 1e-9;

/// Position of (l, m) in the canonical ordering: l ascending, m = -l..l.
constexpr int sh_index(int l, int m) noexcept { return l * l + l + m; }
constexpr int sh_count(int l_max) noexcept { return (l_max + 1) * (l_max + 1); }

/// Coefficients of the three coordinate functions x, y, z, stored as three
/// consecutive blocks of sh_count(l_max) values.
struct ShCoeffs {
    int l_max = 0;
    std::vector<double> coeffs;

    ShCoeffs() = default;
    explicit ShCoeffs(int l_max);

    [[nodiscard]] int per_channel_count() const noexcept { return sh_count(l_max); }
    [[nodiscard]] double at(int channel, int l, int m) const {
        return coeffs[channel * sh_count(l_max) + sh_index(l, m)];
    }
    double& at(int channel, int l, int m) { return coeffs[channel * sh_count(l_max) + sh_index(l, m)]; }
    [[nodiscard]] std::span<const double> channel(int c) const {
        return {coeffs.data() + c * sh_count(l_max), static_cast<std::size_t>(sh_count(l_max))};
    }
};

enum class DescriptorMode { raw_coeffs, degree_energy };

struct ShapeDescriptor {
    DescriptorMode mode = DescriptorMode::raw_coeffs;
    std::vector<double> values;
};

/// Real orthonormal harmonic without the Condon-Shortley phase:
/// m > 0 uses sqrt(2) N P_l^m cos(m phi), m < 0 uses sqrt(2) N P_l^|m| sin(|m| phi).
double real_sh_basis(int l, int m, double theta, double phi);

/// All sh_count(l_max) basis values at one direction (need not be unit length).
void real_sh_basis_all(int l_max, const Eigen::Vector3d& direction, std::span<double> out);

/// Colatitude/longitude of a direction.
void to_spherical(const Eigen::Vector3d& direction, double& theta, double& phi);

/// Spherical area attributed to each vertex: a third of each incident
/// triangle's solid angle. Sums to 4 pi on an injective map.
std::vector<double> spherical_vertex_areas(const TriMesh& m, const SphericalParam& p);

/// Weighted damped least squares for one scalar function sampled at directions.
/// Throws UnderdeterminedError when there are fewer samples than 2 * sh_count(l_max).
std::vector<double> fit_scalar(std::span<const Eigen::Vector3d> directions,
                               std::span<const double> values, std::span<const double> weights,
                               int l_max, double damping = kFitDamping);

/// Fits x, y, z of the mesh vertices as functions of their spherical images.
ShCoeffs fit_coefficients(const TriMesh& m, const SphericalParam& p, int l_max = kDefaultLMax);

struct Reconstruction {
    std::vector<Eigen::Vector3d> points;
    double rms_error = 0.0;
};

/// Synthesises one point per parameter position; rms_error is measured against m.
Reconstruction reconstruct(const ShCoeffs& c, const SphericalParam& p, const TriMesh& m);

/// First n coefficients of each channel, concatenated x, y, z.
std::vector<double> truncate(const ShCoeffs& c, int n_per_channel);

/// E_c(l) = sqrt(sum_m c(l,m)^2), per channel, channel-major. With
/// normalize_scale the values are divided by the cross-channel degree-1 total.
ShapeDescriptor degree_energy(const ShCoeffs& c, bool normalize_scale = false);

/// T(l) = sqrt(sum_c E_c(l)^2): invariant under rotations of the mesh and of the sphere.
std::vector<double> total_degree_energy(const ShCoeffs& c);

struct CoeffDifference {
    std::vector<double> diff;
    double norm = 0.0;
};

CoeffDifference coeff_difference(std::span<const double> a, std::span<const double> b);

/// Rows `id,channel,l,m,value` with channel in {x,y,z}; values round-trip exactly.
void write_coefficients_csv(std::ostream& out, const std::string& id, const ShCoeffs& c);
void write_coefficients_header(std::ostream& out);

/// Header `id,f0,...,f{n-1}` then one row per descriptor.
void write_descriptor_csv(std::ostream& out,
                          const std::vector<std::pair<std::string, std::vector<double>>>& rows);

/// Parses a coefficient CSV (header required) into id -> coefficients, in file order.
std::vector<std::pair<std::string, ShCoeffs>> read_coefficients_csv(const std::filesystem::path& path);

}  // namespace nodule
