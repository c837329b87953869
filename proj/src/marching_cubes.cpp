#include <algorithm>
#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include <Eigen/Geometry>

#include "nodule/error.hpp"
#include "nodule/mesh.hpp"

namespace nodule {

namespace {

// Corner c of a unit cube has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
Eigen::Vector3d corner_offset(int c) {
    return {static_cast<double>(c & 1), static_cast<double>((c >> 1) & 1),
            static_cast<double>((c >> 2) & 1)};
}

struct CubeEdge {
    int c0;
    int c1;
    int axis;
};

// The 12 cube edges, ordered by (lower corner, axis).
const std::array<CubeEdge, 12>& cube_edges() {
    static const std::array<CubeEdge, 12> edges = [] {
        std::array<CubeEdge, 12> e{};
        int n = 0;
        for (int c = 0; c < 8; ++c) {
            for (int axis = 0; axis < 3; ++axis) {
                if ((c >> axis & 1) == 0) {
                    e[n++] = {c, c | (1 << axis), axis};
                }
            }
        }
        return e;
    }();
    return edges;
}

int edge_between(int a, int b) {
    const auto& edges = cube_edges();
    for (int e = 0; e < 12; ++e) {
        if ((edges[e].c0 == a && edges[e].c1 == b) || (edges[e].c0 == b && edges[e].c1 == a)) {
            return e;
        }
    }
    return -1;
}

Eigen::Vector3d edge_mid(int e) {
    const auto& edge = cube_edges()[e];
    return 0.5 * (corner_offset(edge.c0) + corner_offset(edge.c1));
}

// Polygons (cycles of cube-edge ids, counter-clockwise seen from the
// background side) for each of the 256 corner configurations. Derived by
// pairing edge crossings on each face and chaining the oriented segments;
// face saddles keep the two foreground corners connected. Since the
// decision on a face depends only on that face's corners, neighbouring
// cubes agree and the surface is watertight.
using Polygon = std::vector<int>;

std::vector<Polygon> polygons_for(int config) {
    auto fg = [&](int c) { return (config >> c & 1) != 0; };
    std::array<int, 12> next{};
    next.fill(-1);

    for (int axis = 0; axis < 3; ++axis) {
        for (int side = 0; side < 2; ++side) {
            const int b = (axis + 1) % 3;
            const int d = (axis + 2) % 3;
            const int base = side << axis;
            const std::array<int, 4> ring = {base, base | (1 << b), base | (1 << b) | (1 << d),
                                             base | (1 << d)};
            Eigen::Vector3d normal = Eigen::Vector3d::Zero();
            normal[axis] = side == 0 ? -1.0 : 1.0;

            std::array<int, 4> ring_edges{};
            for (int k = 0; k < 4; ++k) {
                ring_edges[k] = edge_between(ring[k], ring[(k + 1) % 4]);
            }
            std::vector<std::array<int, 2>> segments;
            std::vector<int> crossing;
            for (int k = 0; k < 4; ++k) {
                if (fg(ring[k]) != fg(ring[(k + 1) % 4])) {
                    crossing.push_back(k);
                }
            }
            if (crossing.size() == 2) {
                segments.push_back({ring_edges[crossing[0]], ring_edges[crossing[1]]});
            } else if (crossing.size() == 4) {
                // Saddle: cut off each background corner on its own.
                for (int k = 0; k < 4; ++k) {
                    if (!fg(ring[k])) {
                        segments.push_back({ring_edges[(k + 3) % 4], ring_edges[k]});
                    }
                }
            }
            for (auto seg : segments) {
                const auto& ea = cube_edges()[seg[0]];
                const int fg_corner = fg(ea.c0) ? ea.c0 : ea.c1;
                const Eigen::Vector3d away = edge_mid(seg[0]) - corner_offset(fg_corner);
                const Eigen::Vector3d dir = edge_mid(seg[1]) - edge_mid(seg[0]);
                if (dir.dot(away.cross(normal)) < 0.0) {
                    std::swap(seg[0], seg[1]);
                }
                next[seg[0]] = seg[1];
            }
        }
    }

    std::vector<Polygon> polygons;
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
        if (next[start] < 0 || used[start]) {
            continue;
        }
        Polygon poly;
        for (int e = start; !used[e]; e = next[e]) {
            used[e] = true;
            poly.push_back(e);
        }
        polygons.push_back(std::move(poly));
    }
    return polygons;
}

const std::array<std::vector<Polygon>, 256>& case_table() {
    static const std::array<std::vector<Polygon>, 256> table = [] {
        std::array<std::vector<Polygon>, 256> t;
        for (int config = 0; config < 256; ++config) {
            t[config] = polygons_for(config);
        }
        return t;
    }();
    return table;
}

}  // namespace

TriMesh extract_isosurface(const Volume& mask) {
    if (!mask.is_mask()) {
        throw ArgumentError("extract_isosurface requires a mask volume");
    }
    if (foreground_count(mask) == 0) {
        throw EmptyInputError("mask has no foreground voxels");
    }
    const auto& dims = mask.dims;
    auto inside = [&](int i, int j, int k) {
        if (i < 0 || j < 0 || k < 0 || i >= dims[0] || j >= dims[1] || k >= dims[2]) {
            return false;
        }
        return mask.at(i, j, k) >= 0.5F;
    };

    TriMesh mesh;
    // Grid edges are keyed by padded lower-corner coordinates and axis.
    const std::int64_t px = dims[0] + 2;
    const std::int64_t py = dims[1] + 2;
    std::unordered_map<std::int64_t, int> edge_vertex;
    auto grid_edge_vertex = [&](int i, int j, int k, int axis) {
        const std::int64_t key = (((static_cast<std::int64_t>(k + 1) * py) + (j + 1)) * px + (i + 1)) * 3 + axis;
        auto [it, inserted] = edge_vertex.try_emplace(key, mesh.vertex_count());
        if (inserted) {
            Eigen::Vector3d idx(i, j, k);
            idx[axis] += 0.5;
            mesh.vertices.push_back(mask.physical(idx[0], idx[1], idx[2]));
        }
        return it->second;
    };

    const auto& table = case_table();
    const auto& edges = cube_edges();
    for (int k = -1; k < dims[2]; ++k) {
        for (int j = -1; j < dims[1]; ++j) {
            for (int i = -1; i < dims[0]; ++i) {
                int config = 0;
                for (int c = 0; c < 8; ++c) {
                    if (inside(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1))) {
                        config |= 1 << c;
                    }
                }
                if (config == 0 || config == 255) {
                    continue;
                }
                for (const auto& poly : table[config]) {
                    std::vector<int> ids;
                    ids.reserve(poly.size());
                    for (int e : poly) {
                        const auto& edge = edges[e];
                        ids.push_back(grid_edge_vertex(i + (edge.c0 & 1), j + (edge.c0 >> 1 & 1),
                                                       k + (edge.c0 >> 2 & 1), edge.axis));
                    }
                    if (ids.size() == 3) {
                        mesh.triangles.push_back({ids[0], ids[1], ids[2]});
                    } else if (ids.size() == 4) {
                        const auto& v = mesh.vertices;
                        if ((v[ids[0]] - v[ids[2]]).squaredNorm() <=
                            (v[ids[1]] - v[ids[3]]).squaredNorm()) {
                            mesh.triangles.push_back({ids[0], ids[1], ids[2]});
                            mesh.triangles.push_back({ids[0], ids[2], ids[3]});
                        } else {
                            mesh.triangles.push_back({ids[1], ids[2], ids[3]});
                            mesh.triangles.push_back({ids[1], ids[3], ids[0]});
                        }
                    } else {
                        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
                        for (int id : ids) {
                            centroid += mesh.vertices[id];
                        }
                        centroid /= static_cast<double>(ids.size());
                        const int c = mesh.vertex_count();
                        mesh.vertices.push_back(centroid);
                        for (std::size_t n = 0; n < ids.size(); ++n) {
                            mesh.triangles.push_back({ids[n], ids[(n + 1) % ids.size()], c});
                        }
                    }
                }
            }
        }
    }
    return mesh;
}

}  // namespace nodule
