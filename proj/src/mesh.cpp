#include "nodule/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <Eigen/Geometry>

#include "nodule/error.hpp"

namespace nodule {

namespace {

std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

// Directed half-edge -> number of triangles using it in that direction.
std::unordered_map<std::uint64_t, int> directed_edge_counts(const TriMesh& m) {
    std::unordered_map<std::uint64_t, int> counts;
    counts.reserve(m.triangles.size() * 3);
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            ++counts[edge_key(t[k], t[(k + 1) % 3])];
        }
    }
    return counts;
}

class DisjointSets {
public:
    explicit DisjointSets(int n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
    int find(int x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) {
            parent_[std::max(a, b)] = std::min(a, b);
        }
    }

private:
    std::vector<int> parent_;
};

// Component label per triangle (connectivity through shared vertices).
std::vector<int> triangle_components(const TriMesh& m, int& component_count) {
    DisjointSets sets(m.vertex_count());
    for (const auto& t : m.triangles) {
        sets.unite(t[0], t[1]);
        sets.unite(t[1], t[2]);
    }
    std::unordered_map<int, int> label;
    std::vector<int> out(m.triangles.size());
    for (std::size_t f = 0; f < m.triangles.size(); ++f) {
        const int root = sets.find(m.triangles[f][0]);
        auto [it, inserted] = label.try_emplace(root, static_cast<int>(label.size()));
        out[f] = it->second;
    }
    component_count = static_cast<int>(label.size());
    return out;
}

}  // namespace

std::vector<std::array<int, 2>> unique_edges(const TriMesh& m) {
    std::vector<std::array<int, 2>> edges;
    edges.reserve(m.triangles.size() * 3);
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k];
            const int b = t[(k + 1) % 3];
            edges.push_back({std::min(a, b), std::max(a, b)});
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

std::vector<std::vector<int>> vertex_neighbors(const TriMesh& m) {
    std::vector<std::vector<int>> nbrs(m.vertices.size());
    for (const auto& e : unique_edges(m)) {
        nbrs[e[0]].push_back(e[1]);
        nbrs[e[1]].push_back(e[0]);
    }
    for (auto& n : nbrs) {
        std::sort(n.begin(), n.end());
    }
    return nbrs;
}

int euler_characteristic(const TriMesh& m) {
    std::vector<char> used(m.vertices.size(), 0);
    for (const auto& t : m.triangles) {
        for (int v : t) {
            used[v] = 1;
        }
    }
    const int v = static_cast<int>(std::count(used.begin(), used.end(), 1));
    return v - static_cast<int>(unique_edges(m).size()) + m.triangle_count();
}

bool is_closed_manifold(const TriMesh& m) {
    if (m.triangles.empty()) {
        return false;
    }
    for (const auto& t : m.triangles) {
        for (int v : t) {
            if (v < 0 || v >= m.vertex_count()) {
                return false;
            }
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            return false;
        }
    }
    const auto counts = directed_edge_counts(m);
    for (const auto& [key, count] : counts) {
        const int a = static_cast<int>(key >> 32);
        const int b = static_cast<int>(key & 0xffffffffU);
        if (count != 1) {
            return false;
        }
        auto rev = counts.find(edge_key(b, a));
        if (rev == counts.end() || rev->second != 1) {
            return false;
        }
    }
    // Vertex links: the opposite edges (b -> c) of the triangles around v must form one cycle.
    std::vector<std::vector<std::array<int, 2>>> link(m.vertices.size());
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            link[t[k]].push_back({t[(k + 1) % 3], t[(k + 2) % 3]});
        }
    }
    for (const auto& fan : link) {
        if (fan.empty()) {
            continue;
        }
        std::unordered_map<int, int> next;
        for (const auto& e : fan) {
            next[e[0]] = e[1];
        }
        std::size_t steps = 0;
        int cur = fan.front()[0];
        do {
            auto it = next.find(cur);
            if (it == next.end()) {
                return false;
            }
            cur = it->second;
            ++steps;
        } while (cur != fan.front()[0] && steps <= fan.size());
        if (steps != fan.size()) {
            return false;
        }
    }
    return true;
}

bool check_genus_zero(const TriMesh& m) {
    if (!is_closed_manifold(m)) {
        return false;
    }
    int components = 0;
    triangle_components(m, components);
    return components == 1 && euler_characteristic(m) == 2;
}

double signed_volume(const TriMesh& m) {
    double sum = 0.0;
    for (const auto& t : m.triangles) {
        sum += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]]));
    }
    return sum / 6.0;
}

double surface_area(const TriMesh& m) {
    double sum = 0.0;
    for (const auto& t : m.triangles) {
        sum += 0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
    }
    return sum;
}

Eigen::Vector3d vertex_centroid(const TriMesh& m) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& v : m.vertices) {
        c += v;
    }
    return m.vertices.empty() ? c : Eigen::Vector3d(c / static_cast<double>(m.vertices.size()));
}

TriMesh compact(const TriMesh& m) {
    std::vector<int> remap(m.vertices.size(), -1);
    TriMesh out;
    out.triangles.reserve(m.triangles.size());
    for (const auto& t : m.triangles) {
        Triangle nt{};
        for (int k = 0; k < 3; ++k) {
            if (remap[t[k]] < 0) {
                remap[t[k]] = out.vertex_count();
                out.vertices.push_back(m.vertices[t[k]]);
            }
            nt[k] = remap[t[k]];
        }
        out.triangles.push_back(nt);
    }
    return out;
}

TriMesh weld_vertices(const TriMesh& m, double rel_tol) {
    if (m.vertices.empty()) {
        return m;
    }
    Eigen::Vector3d lo = m.vertices.front();
    Eigen::Vector3d hi = lo;
    for (const auto& v : m.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const double diag = (hi - lo).norm();
    const double tol = std::max(rel_tol * diag, 1e-300);
    auto cell_of = [&](const Eigen::Vector3d& v) {
        return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor((v[0] - lo[0]) / tol)),
                                           static_cast<std::int64_t>(std::floor((v[1] - lo[1]) / tol)),
                                           static_cast<std::int64_t>(std::floor((v[2] - lo[2]) / tol))};
    };
    std::map<std::array<std::int64_t, 3>, std::vector<int>> grid;
    std::vector<int> rep(m.vertices.size());
    for (int i = 0; i < m.vertex_count(); ++i) {
        const auto cell = cell_of(m.vertices[i]);
        int found = -1;
        for (std::int64_t dx = -1; dx <= 1 && found < 0; ++dx) {
            for (std::int64_t dy = -1; dy <= 1 && found < 0; ++dy) {
                for (std::int64_t dz = -1; dz <= 1 && found < 0; ++dz) {
                    auto it = grid.find({cell[0] + dx, cell[1] + dy, cell[2] + dz});
                    if (it == grid.end()) {
                        continue;
                    }
                    for (int j : it->second) {
                        if ((m.vertices[j] - m.vertices[i]).norm() <= tol) {
                            found = j;
                            break;
                        }
                    }
                }
            }
        }
        if (found >= 0) {
            rep[i] = found;
        } else {
            rep[i] = i;
            grid[cell].push_back(i);
        }
    }
    TriMesh welded;
    welded.vertices = m.vertices;
    for (const auto& t : m.triangles) {
        const Triangle nt{rep[t[0]], rep[t[1]], rep[t[2]]};
        if (nt[0] != nt[1] && nt[1] != nt[2] && nt[0] != nt[2]) {
            welded.triangles.push_back(nt);
        }
    }
    return compact(welded);
}

TriMesh remove_islands(const TriMesh& m) {
    int count = 0;
    const auto labels = triangle_components(m, count);
    if (count <= 1) {
        return m;
    }
    std::vector<int> tri_count(count, 0);
    std::vector<double> volume(count, 0.0);
    for (std::size_t f = 0; f < m.triangles.size(); ++f) {
        const auto& t = m.triangles[f];
        ++tri_count[labels[f]];
        volume[labels[f]] += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
    }
    int best = 0;
    for (int c = 1; c < count; ++c) {
        if (tri_count[c] > tri_count[best] ||
            (tri_count[c] == tri_count[best] && std::abs(volume[c]) > std::abs(volume[best]))) {
            best = c;
        }
    }
    TriMesh kept;
    kept.vertices = m.vertices;
    for (std::size_t f = 0; f < m.triangles.size(); ++f) {
        if (labels[f] == best) {
            kept.triangles.push_back(m.triangles[f]);
        }
    }
    return compact(kept);
}

TriMesh fill_holes(const TriMesh& m) {
    const auto counts = directed_edge_counts(m);
    // Boundary half-edges a -> b have no twin b -> a; the loop continues from b.
    std::map<int, std::vector<int>> outgoing;
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k];
            const int b = t[(k + 1) % 3];
            if (!counts.contains(edge_key(b, a))) {
                outgoing[a].push_back(b);
            }
        }
    }
    if (outgoing.empty()) {
        return m;
    }
    for (const auto& [v, outs] : outgoing) {
        if (outs.size() != 1) {
            throw TopologyError("boundary loop through vertex " + std::to_string(v) + " is not simple");
        }
    }
    TriMesh out = m;
    std::map<int, bool> visited;
    for (const auto& [start, outs] : outgoing) {
        if (visited[start]) {
            continue;
        }
        std::vector<int> loop;
        int cur = start;
        while (!visited[cur]) {
            visited[cur] = true;
            loop.push_back(cur);
            auto it = outgoing.find(cur);
            if (it == outgoing.end()) {
                throw TopologyError("open boundary chain at vertex " + std::to_string(cur));
            }
            cur = it->second.front();
        }
        if (cur != start || loop.size() < 3) {
            throw TopologyError("boundary loop starting at vertex " + std::to_string(start) +
                                " is not a simple cycle");
        }
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (int v : loop) {
            centroid += m.vertices[v];
        }
        centroid /= static_cast<double>(loop.size());
        const int c = out.vertex_count();
        out.vertices.push_back(centroid);
        for (std::size_t n = 0; n < loop.size(); ++n) {
            // Existing triangle owns a -> b, so the cap uses b -> a.
            out.triangles.push_back({loop[(n + 1) % loop.size()], loop[n], c});
        }
    }
    return out;
}

TriMesh laplacian_smooth(const TriMesh& m, int steps) {
    if (steps <= 0) {
        return m;
    }
    const auto nbrs = vertex_neighbors(m);
    TriMesh cur = m;
    std::vector<Eigen::Vector3d> next(m.vertices.size());
    for (int s = 0; s < steps; ++s) {
        for (std::size_t v = 0; v < nbrs.size(); ++v) {
            if (nbrs[v].empty()) {
                next[v] = cur.vertices[v];
                continue;
            }
            Eigen::Vector3d sum = Eigen::Vector3d::Zero();
            for (int u : nbrs[v]) {
                sum += cur.vertices[u];
            }
            next[v] = sum / static_cast<double>(nbrs[v].size());
        }
        cur.vertices.swap(next);
    }
    return cur;
}

void write_off(const TriMesh& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(9);
    out << "OFF\n" << m.vertex_count() << ' ' << m.triangle_count() << " 0\n";
    for (const auto& v : m.vertices) {
        out << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    }
    for (const auto& t : m.triangles) {
        out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    }
}

TriMesh read_off(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string magic;
    in >> magic;
    if (magic != "OFF") {
        throw FormatError(path.string() + ": missing OFF header");
    }
    long nv = -1;
    long nf = -1;
    long ne = 0;
    if (!(in >> nv >> nf >> ne) || nv < 0 || nf < 0) {
        throw FormatError(path.string() + ": bad OFF counts line");
    }
    TriMesh m;
    m.vertices.resize(static_cast<std::size_t>(nv));
    for (auto& v : m.vertices) {
        if (!(in >> v[0] >> v[1] >> v[2])) {
            throw FormatError(path.string() + ": truncated vertex list");
        }
    }
    m.triangles.resize(static_cast<std::size_t>(nf));
    for (auto& t : m.triangles) {
        int arity = 0;
        if (!(in >> arity >> t[0] >> t[1] >> t[2]) || arity != 3) {
            throw FormatError(path.string() + ": only triangle faces are supported");
        }
        for (int v : t) {
            if (v < 0 || v >= nv) {
                throw FormatError(path.string() + ": face index out of range");
            }
        }
    }
    return m;
}

TriMesh make_icosphere(int subdivisions, double radius, const Eigen::Vector3d& center) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    TriMesh m;
    m.vertices = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
                  {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
                  {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& v : m.vertices) {
        v.normalize();
    }
    m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                   {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                   {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                   {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto [it, inserted] = mid.try_emplace(key, m.vertex_count());
            if (inserted) {
                m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
            }
            return it->second;
        };
        std::vector<Triangle> refined;
        refined.reserve(m.triangles.size() * 4);
        for (const auto& t : m.triangles) {
            const int ab = midpoint(t[0], t[1]);
            const int bc = midpoint(t[1], t[2]);
            const int ca = midpoint(t[2], t[0]);
            refined.push_back({t[0], ab, ca});
            refined.push_back({t[1], bc, ab});
            refined.push_back({t[2], ca, bc});
            refined.push_back({ab, bc, ca});
        }
        m.triangles.swap(refined);
    }
    for (auto& v : m.vertices) {
        v = center + radius * v;
    }
    return m;
}

TriMesh make_torus(double major_radius, double minor_radius, int major_segments, int minor_segments) {
    if (major_segments < 3 || minor_segments < 3) {
        throw ArgumentError("torus needs at least 3 segments each way");
    }
    TriMesh m;
    for (int i = 0; i < major_segments; ++i) {
        const double u = 2.0 * M_PI * i / major_segments;
        for (int j = 0; j < minor_segments; ++j) {
            const double v = 2.0 * M_PI * j / minor_segments;
            const double r = major_radius + minor_radius * std::cos(v);
            m.vertices.emplace_back(r * std::cos(u), r * std::sin(u), minor_radius * std::sin(v));
        }
    }
    auto id = [&](int i, int j) {
        return (i % major_segments) * minor_segments + (j % minor_segments);
    };
    for (int i = 0; i < major_segments; ++i) {
        for (int j = 0; j < minor_segments; ++j) {
            m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    }
    return m;
}

}  // namespace nodule
