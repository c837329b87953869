#include "nodule/spherical_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <Eigen/Geometry>

#include "nodule/error.hpp"
#include "nodule/log.hpp"

namespace nodule {

namespace {

constexpr double kMassCenterTol = 1e-6;
constexpr int kMobiusRounds = 100;
constexpr int kMaxHalvings = 20;
constexpr int kMaxStalls = 50;

// Deterministic direction for vertex i (Fibonacci lattice), used when a normal vanishes.
Eigen::Vector3d fallback_direction(int i, int n) {
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    const double z = 1.0 - 2.0 * (i + 0.5) / std::max(n, 1);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(golden * i), r * std::sin(golden * i), z};
}

Eigen::Vector3d mobius_apply(const Eigen::Vector3d& x, const Eigen::Vector3d& a) {
    const Eigen::Vector3d d = x - a;
    const double d2 = d.squaredNorm();
    if (d2 < 1e-300) {
        return x;
    }
    const Eigen::Vector3d y = ((1.0 - a.squaredNorm()) * d - d2 * a) / d2;
    return y.normalized();
}

std::vector<Eigen::Vector3d> tangential_laplacian(const EdgeWeights& w,
                                                  std::span<const Eigen::Vector3d> p) {
    std::vector<Eigen::Vector3d> lap(p.size(), Eigen::Vector3d::Zero());
    for (std::size_t e = 0; e < w.edges.size(); ++e) {
        const int u = w.edges[e][0];
        const int v = w.edges[e][1];
        const Eigen::Vector3d d = w.weights[e] * (p[u] - p[v]);
        lap[v] += d;
        lap[u] -= d;
    }
    for (std::size_t v = 0; v < p.size(); ++v) {
        lap[v] -= lap[v].dot(p[v]) * p[v];
    }
    return lap;
}

}  // namespace

void MapOptions::validate() const {
    if (!(step_size > 0.0 && step_size <= 1.0)) {
        throw ArgumentError("step_size must lie in (0, 1]");
    }
    if (max_iterations < 1 || !(energy_rel_tol > 0.0) || normalize_every < 1) {
        throw ArgumentError("iteration limits and tolerances must be positive");
    }
}

EdgeWeights cotangent_weights(const TriMesh& m, double floor) {
    std::map<std::array<int, 2>, double> acc;
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int o = t[k];
            const int a = t[(k + 1) % 3];
            const int b = t[(k + 2) % 3];
            const Eigen::Vector3d ea = m.vertices[a] - m.vertices[o];
            const Eigen::Vector3d eb = m.vertices[b] - m.vertices[o];
            const double sin_area = ea.cross(eb).norm();
            const double cot = sin_area > 0.0 ? ea.dot(eb) / sin_area : 0.0;
            acc[{std::min(a, b), std::max(a, b)}] += 0.5 * cot;
        }
    }
    EdgeWeights w;
    w.edges.reserve(acc.size());
    w.weights.reserve(acc.size());
    for (const auto& [edge, weight] : acc) {
        w.edges.push_back(edge);
        w.weights.push_back(std::max(weight, floor));
    }
    return w;
}

double harmonic_energy(const EdgeWeights& w, std::span<const Eigen::Vector3d> positions) {
    double e = 0.0;
    for (std::size_t k = 0; k < w.edges.size(); ++k) {
        e += w.weights[k] * (positions[w.edges[k][0]] - positions[w.edges[k][1]]).squaredNorm();
    }
    return e;
}

double harmonic_energy(const TriMesh& m, const SphericalParam& p, NormCheck check) {
    if (p.positions.size() != m.vertices.size()) {
        throw ArgumentError("parameterisation size does not match mesh");
    }
    if (check == NormCheck::enforce) {
        for (const auto& x : p.positions) {
            if (std::abs(x.norm() - 1.0) > 1e-6) {
                throw ArgumentError("parameterisation positions must be unit length");
            }
        }
    }
    return harmonic_energy(cotangent_weights(m), p.positions);
}

SphericalParam gauss_map_init(const TriMesh& m) {
    if (!check_genus_zero(m)) {
        throw TopologyError("spherical mapping requires a closed genus-zero mesh");
    }
    std::vector<Eigen::Vector3d> normals(m.vertices.size(), Eigen::Vector3d::Zero());
    for (const auto& t : m.triangles) {
        const Eigen::Vector3d n =
            0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
        for (int v : t) {
            normals[v] += n;
        }
    }
    double scale = 0.0;
    for (const auto& n : normals) {
        scale = std::max(scale, n.norm());
    }
    SphericalParam p;
    p.source_vertex_count = m.vertex_count();
    p.positions.resize(normals.size());
    for (std::size_t v = 0; v < normals.size(); ++v) {
        Eigen::Vector3d n = normals[v];
        if (n.norm() <= 1e-12 * std::max(scale, 1e-300)) {
            n += 1e-6 * std::max(scale, 1.0) *
                 fallback_direction(static_cast<int>(v), m.vertex_count());
        }
        p.positions[v] = n.normalized();
    }
    return p;
}

Eigen::Vector3d mass_center(const TriMesh& m, std::span<const Eigen::Vector3d> positions) {
    // Each triangle carries its surface area on the original mesh, placed at the
    // spherical centroid of its image. The weights stay positive on folded maps,
    // so a map collapsing toward one point shows up as a centre of norm ~1.
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double total = 0.0;
    for (const auto& t : m.triangles) {
        const double area =
            0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
        const Eigen::Vector3d centroid = positions[t[0]] + positions[t[1]] + positions[t[2]];
        const double len = centroid.norm();
        if (len > 0.0) {
            sum += area * centroid / len;
        }
        total += area;
    }
    return total > 0.0 ? Eigen::Vector3d(sum / total) : Eigen::Vector3d::Zero();
}

SphericalParam mobius_normalize(const SphericalParam& p, const TriMesh& m) {
    Eigen::Vector3d center = mass_center(m, p.positions);
    if (center.norm() <= kMassCenterTol) {
        return p;
    }
    SphericalParam cur = p;
    std::vector<Eigen::Vector3d> trial(p.positions.size());
    auto transformed_center = [&](const Eigen::Vector3d& a) {
        for (std::size_t v = 0; v < trial.size(); ++v) {
            trial[v] = mobius_apply(cur.positions[v], a);
        }
        return mass_center(m, trial);
    };
    for (int round = 0; round < kMobiusRounds && center.norm() > kMassCenterTol; ++round) {
        // To first order x -> x - 2 (I - x x^T) a, so the centre moves by -J a with
        // J = 2 sum_i A_i (I - c_i c_i^T) / sum_i A_i. Gauss-Newton step a = J^-1 c.
        Eigen::Matrix3d jac = Eigen::Matrix3d::Zero();
        double total = 0.0;
        for (const auto& t : m.triangles) {
            const double area = 0.5 * (m.vertices[t[1]] - m.vertices[t[0]])
                                           .cross(m.vertices[t[2]] - m.vertices[t[0]])
                                           .norm();
            const Eigen::Vector3d dir =
                (cur.positions[t[0]] + cur.positions[t[1]] + cur.positions[t[2]]).normalized();
            jac += area * (Eigen::Matrix3d::Identity() - dir * dir.transpose());
            total += area;
        }
        jac *= 2.0 / std::max(total, 1e-300);
        Eigen::Vector3d step = jac.colPivHouseholderQr().solve(center);
        if (!step.allFinite() || step.norm() > 0.5) {
            step = 0.5 * center.normalized();
        }

        bool improved = false;
        for (int halving = 0; halving < 30; ++halving, step *= 0.5) {
            const Eigen::Vector3d moved = transformed_center(step);
            if (moved.norm() < center.norm()) {
                cur.positions.swap(trial);
                center = moved;
                improved = true;
                break;
            }
        }
        if (improved) {
            continue;
        }
        // Fallback: bisect the inversion magnitude along the centre direction, where the
        // projected centre is positive at 0 and tends to -1 as the magnitude tends to 1.
        const Eigen::Vector3d dir = center.normalized();
        double lo = 0.0;
        double hi = 1.0 - 1e-9;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (transformed_center(mid * dir).dot(dir) > 0.0 ? lo : hi) = mid;
        }
        const Eigen::Vector3d moved = transformed_center(0.5 * (lo + hi) * dir);
        if (moved.norm() >= center.norm()) {
            break;
        }
        cur.positions.swap(trial);
        center = moved;
    }
    return cur;
}

double tangential_residual(const EdgeWeights& w, std::span<const Eigen::Vector3d> positions) {
    double worst = 0.0;
    for (const auto& t : tangential_laplacian(w, positions)) {
        worst = std::max(worst, t.norm());
    }
    return worst;
}

MapResult conformal_map_traced(const TriMesh& m, const MapOptions& opts) {
    opts.validate();
    MapResult result;
    SphericalParam p = mobius_normalize(gauss_map_init(m), m);
    const EdgeWeights w = cotangent_weights(m);
    double energy = harmonic_energy(w, p.positions);
    result.trace.push_back({0, energy, mass_center(m, p.positions).norm(), true});

    std::vector<Eigen::Vector3d> candidate(p.positions.size());
    int stalls = 0;
    int it = 1;
    for (; it <= opts.max_iterations; ++it) {
        const auto lap = tangential_laplacian(w, p.positions);
        double step = opts.step_size;
        bool accepted = false;
        double candidate_energy = energy;
        for (int halving = 0; halving <= kMaxHalvings; ++halving, step *= 0.5) {
            for (std::size_t v = 0; v < candidate.size(); ++v) {
                candidate[v] = (p.positions[v] + step * lap[v]).normalized();
            }
            candidate_energy = harmonic_energy(w, candidate);
            if (candidate_energy <= energy) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            double grad2 = 0.0;
            for (const auto& g : lap) {
                grad2 += g.squaredNorm();
            }
            // Smallest tried step predicts a negligible decrease: stationary up to rounding.
            if (2.0 * step * grad2 <= opts.energy_rel_tol * energy) {
                result.converged = true;
                break;
            }
            if (++stalls >= kMaxStalls) {
                throw ConvergenceError("harmonic flow failed to decrease energy for " +
                                       std::to_string(kMaxStalls) + " consecutive iterations");
            }
            p = mobius_normalize(p, m);
            energy = harmonic_energy(w, p.positions);
            result.trace.push_back({it, energy, mass_center(m, p.positions).norm(), true});
            continue;
        }
        stalls = 0;
        const double decrease = energy - candidate_energy;
        p.positions.swap(candidate);
        const double previous = energy;
        energy = candidate_energy;
        const bool normalize_now = it % opts.normalize_every == 0;
        result.trace.push_back({it, energy, std::nullopt, false});
        if (normalize_now) {
            p = mobius_normalize(p, m);
            energy = harmonic_energy(w, p.positions);
            result.trace.back().mass_center_norm = mass_center(m, p.positions).norm();
            result.trace.push_back({it, energy, result.trace.back().mass_center_norm, true});
        }
        if (decrease <= opts.energy_rel_tol * previous) {
            result.converged = true;
            break;
        }
    }
    result.iterations = std::min(it, opts.max_iterations);
    p = mobius_normalize(p, m);
    const double final_center = mass_center(m, p.positions).norm();
    if (final_center > 1e-3) {
        throw ConvergenceError("Moebius normalisation left mass centre at " +
                               std::to_string(final_center));
    }
    p.source_vertex_count = m.vertex_count();
    result.param = std::move(p);
    if (!result.converged) {
        log::debug("harmonic flow hit the iteration limit");
    }
    return result;
}

SphericalParam conformal_map(const TriMesh& m, const MapOptions& opts) {
    return conformal_map_traced(m, opts).param;
}

void write_energy_trace(const std::vector<TraceEntry>& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(17);
    out << "iteration,energy,mass_center_norm\n";
    for (const auto& e : trace) {
        out << e.iteration << ',' << e.energy << ',';
        if (e.mass_center_norm) {
            out << *e.mass_center_norm;
        }
        out << '\n';
    }
}

}  // namespace nodule
