#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "nodule/volume.hpp"

namespace nodule {

using Triangle = std::array<int, 3>;

/// Indexed triangle surface in millimetres. Triangles are counter-clockwise
/// when viewed from outside.
struct TriMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Triangle> triangles;

    [[nodiscard]] int vertex_count() const noexcept { return static_cast<int>(vertices.size()); }
    [[nodiscard]] int triangle_count() const noexcept { return static_cast<int>(triangles.size()); }
    [[nodiscard]] bool empty() const noexcept { return triangles.empty(); }
};

/// Undirected edge list (u < v), sorted, one entry per distinct edge.
std::vector<std::array<int, 2>> unique_edges(const TriMesh& m);

/// Per-vertex neighbour lists, each sorted ascending.
std::vector<std::vector<int>> vertex_neighbors(const TriMesh& m);

/// V - E + F counting only vertices referenced by some triangle.
int euler_characteristic(const TriMesh& m);

/// Every edge shared by exactly two consistently oriented triangles and every
/// vertex link a single cycle.
bool is_closed_manifold(const TriMesh& m);

/// Closed, connected manifold with Euler characteristic 2.
bool check_genus_zero(const TriMesh& m);

/// Signed enclosed volume (positive for outward orientation).
double signed_volume(const TriMesh& m);

double surface_area(const TriMesh& m);

Eigen::Vector3d vertex_centroid(const TriMesh& m);

/// Merges vertices closer than rel_tol times the bounding-box diagonal, drops
/// triangles that collapse, and removes unreferenced vertices.
TriMesh weld_vertices(const TriMesh& m, double rel_tol = 1e-9);

/// Drops unreferenced vertices and renumbers the rest in order of first use.
TriMesh compact(const TriMesh& m);

/// Marching cubes at iso-level 0.5 on the mask padded with one background
/// voxel on every side. Vertices sit at grid-edge midpoints, in physical mm.
/// Face saddles connect the foreground corners. Throws EmptyInputError for a
/// mask without foreground.
TriMesh extract_isosurface(const Volume& mask);

/// Keeps the connected component with the most triangles; ties go to the
/// larger enclosed volume.
TriMesh remove_islands(const TriMesh& m);

/// Closes each boundary loop with a fan around the loop centroid. Throws
/// TopologyError when a boundary vertex has more than one outgoing boundary edge.
TriMesh fill_holes(const TriMesh& m);

/// Uniform (umbrella) Laplacian smoothing with simultaneous updates.
TriMesh laplacian_smooth(const TriMesh& m, int steps = 1);

/// OFF (ASCII). Writer uses 9 significant digits.
void write_off(const TriMesh& m, const std::filesystem::path& path);
TriMesh read_off(const std::filesystem::path& path);

// Primitive generators used by fixtures and the synthetic corpus.

/// Subdivided icosahedron projected onto a sphere; `subdivisions` = 0 gives 12 vertices,
/// 4 gives 2562.
TriMesh make_icosphere(int subdivisions, double radius = 1.0,
                       const Eigen::Vector3d& center = Eigen::Vector3d::Zero());

TriMesh make_torus(double major_radius, double minor_radius, int major_segments,
                   int minor_segments);

}  // namespace nodule
