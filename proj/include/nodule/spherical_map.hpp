#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nodule/mesh.hpp"

namespace nodule {

/// Per-vertex images on the unit sphere; one position per mesh vertex.
struct SphericalParam {
    std::vector<Eigen::Vector3d> positions;
    int source_vertex_count = 0;
};

struct MapOptions {
    double step_size = 0.05;
    int max_iterations = 10000;
    double energy_rel_tol = 1e-7;
    int normalize_every = 10;

    void validate() const;
};

/// Symmetric edge weights (cot a + cot b) / 2 taken from a mesh's own geometry.
struct EdgeWeights {
    std::vector<std::array<int, 2>> edges;
    std::vector<double> weights;
};

inline constexpr double kCotangentFloor = 1e-8;

EdgeWeights cotangent_weights(const TriMesh& m, double floor = kCotangentFloor);

enum class NormCheck { enforce, skip };

/// Dirichlet energy sum_e w_e |p(u) - p(v)|^2 with cotangent weights of m.
/// With NormCheck::enforce, positions must be unit length within 1e-6.
double harmonic_energy(const TriMesh& m, const SphericalParam& p,
                       NormCheck check = NormCheck::enforce);
double harmonic_energy(const EdgeWeights& w, std::span<const Eigen::Vector3d> positions);

/// Area-weighted normals, normalised. Throws TopologyError unless m is genus zero.
SphericalParam gauss_map_init(const TriMesh& m);

/// Centre sum(A_i c_i) / sum(A_i), where c_i is the unit centroid of triangle i on
/// the sphere and A_i its area on the source mesh m (fixed, positive weights).
Eigen::Vector3d mass_center(const TriMesh& m, std::span<const Eigen::Vector3d> positions);

/// Drives the mass centre to the origin by repeated sphere automorphisms
/// x -> ((1-|a|^2)(x-a) - |x-a|^2 a) / |x-a|^2. Each round takes a damped
/// Gauss-Newton step for a, falling back to bisection along the centre.
/// Stops at |centre| <= 1e-6 or after 100 rounds.
SphericalParam mobius_normalize(const SphericalParam& p, const TriMesh& m);

/// Largest tangential component of the weighted Laplacian over all vertices.
double tangential_residual(const EdgeWeights& w, std::span<const Eigen::Vector3d> positions);

struct TraceEntry {
    int iteration = 0;
    double energy = 0.0;
    std::optional<double> mass_center_norm;  // only evaluated at normalisation points
    bool normalized = false;  // entry recorded right after a Moebius normalisation
};

struct MapResult {
    SphericalParam param;
    std::vector<TraceEntry> trace;
    int iterations = 0;
    bool converged = false;
};

/// Harmonic-energy flow from the Gauss map with periodic Moebius normalisation.
/// Every accepted descent step lowers the energy; normalisation entries in
/// the trace start a new monotone run.
MapResult conformal_map_traced(const TriMesh& m, const MapOptions& opts = {});

SphericalParam conformal_map(const TriMesh& m, const MapOptions& opts = {});

/// CSV `iteration,energy,mass_center_norm`.
void write_energy_trace(const std::vector<TraceEntry>& trace, const std::filesystem::path& path);

}  // namespace nodule
