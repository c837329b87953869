#include "nodule/spharm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include "nodule/error.hpp"

namespace nodule {

namespace {

constexpr char kChannelNames[3] = {'x', 'y', 'z'};

// Fully normalised associated Legendre values (orthonormal harmonics for m = 0),
// written to out[sh_index(l, m)] for m >= 0. Standard three-term recurrence in l.
void normalized_legendre(int l_max, double x, double s, std::span<double> out) {
    double pmm = std::sqrt(1.0 / (4.0 * M_PI));
    for (int m = 0; m <= l_max; ++m) {
        if (m > 0) {
            pmm *= std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s;
        }
        out[sh_index(m, m)] = pmm;
        if (m == l_max) {
            break;
        }
        double prev = pmm;
        double cur = std::sqrt(2.0 * m + 3.0) * x * pmm;
        out[sh_index(m + 1, m)] = cur;
        for (int l = m + 2; l <= l_max; ++l) {
            const double l2 = static_cast<double>(l) * l;
            const double m2 = static_cast<double>(m) * m;
            const double a = std::sqrt((4.0 * l2 - 1.0) / (l2 - m2));
            const double b = std::sqrt(((l - 1.0) * (l - 1.0) - m2) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
            const double next = a * (x * cur - b * prev);
            out[sh_index(l, m)] = next;
            prev = cur;
            cur = next;
        }
    }
}

void fill_basis(int l_max, double cos_theta, double sin_theta, double phi, std::span<double> out) {
    normalized_legendre(l_max, cos_theta, sin_theta, out);
    for (int m = 1; m <= l_max; ++m) {
        const double c = M_SQRT2 * std::cos(m * phi);
        const double s = M_SQRT2 * std::sin(m * phi);
        for (int l = m; l <= l_max; ++l) {
            const double p = out[sh_index(l, m)];
            out[sh_index(l, m)] = c * p;
            out[sh_index(l, -m)] = s * p;
        }
    }
}

Eigen::MatrixXd design_matrix(std::span<const Eigen::Vector3d> directions, int l_max) {
    const int k = sh_count(l_max);
    Eigen::MatrixXd b(static_cast<Eigen::Index>(directions.size()), k);
    std::vector<double> row(k);
    for (std::size_t i = 0; i < directions.size(); ++i) {
        real_sh_basis_all(l_max, directions[i], row);
        for (int j = 0; j < k; ++j) {
            b(static_cast<Eigen::Index>(i), j) = row[j];
        }
    }
    return b;
}

void check_sample_count(std::size_t n, int l_max) {
    if (l_max < 0) {
        throw ArgumentError("l_max must be non-negative");
    }
    const std::size_t needed = 2 * static_cast<std::size_t>(sh_count(l_max));
    if (n < needed) {
        throw UnderdeterminedError("spherical harmonic fit at l_max " + std::to_string(l_max) +
                                   " needs " + std::to_string(needed) + " samples, got " +
                                   std::to_string(n));
    }
}

// Solves (B^T W B + damping I) c = B^T W F for every column of F.
Eigen::MatrixXd solve_weighted(const Eigen::MatrixXd& b, std::span<const double> weights,
                               const Eigen::MatrixXd& f, double damping) {
    Eigen::VectorXd sw(b.rows());
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
        if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
            throw ArgumentError("fit weights must be finite and non-negative");
        }
        sw[i] = std::sqrt(weights[i]);
    }
    const Eigen::MatrixXd bw = sw.asDiagonal() * b;
    Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(b.cols(), b.cols());
    normal.selfadjointView<Eigen::Lower>().rankUpdate(bw.transpose());
    normal.diagonal().array() += damping;
    const Eigen::MatrixXd rhs = bw.transpose() * (sw.asDiagonal() * f);
    Eigen::LLT<Eigen::MatrixXd> llt(normal.selfadjointView<Eigen::Lower>());
    if (llt.info() != Eigen::Success) {
        throw UnderdeterminedError("spherical harmonic normal equations are singular");
    }
    return llt.solve(rhs);
}

double solid_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
    const double num = a.dot(b.cross(c));
    const double den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    return std::abs(2.0 * std::atan2(num, den));
}

std::string format_exact(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
        throw FormatError("non-numeric " + what + " '" + s + "'");
    }
    return v;
}

int parse_int(const std::string& s, const std::string& what) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
        throw FormatError("non-integer " + what + " '" + s + "'");
    }
    return v;
}

}  // namespace

ShCoeffs::ShCoeffs(int l_max_) : l_max(l_max_), coeffs(3 * static_cast<std::size_t>(sh_count(l_max_)), 0.0) {
    if (l_max_ < 0) {
        throw ArgumentError("l_max must be non-negative");
    }
}

void to_spherical(const Eigen::Vector3d& direction, double& theta, double& phi) {
    const double r = direction.norm();
    theta = r > 0.0 ? std::acos(std::clamp(direction.z() / r, -1.0, 1.0)) : 0.0;
    phi = std::atan2(direction.y(), direction.x());
}

double real_sh_basis(int l, int m, double theta, double phi) {
    if (l < 0 || std::abs(m) > l) {
        throw ArgumentError("spherical harmonic order out of range: l=" + std::to_string(l) +
                            " m=" + std::to_string(m));
    }
    std::vector<double> values(sh_count(l));
    fill_basis(l, std::cos(theta), std::sin(theta), phi, values);
    return values[sh_index(l, m)];
}

void real_sh_basis_all(int l_max, const Eigen::Vector3d& direction, std::span<double> out) {
    if (out.size() < static_cast<std::size_t>(sh_count(l_max))) {
        throw ArgumentError("basis output buffer too small");
    }
    const double r = direction.norm();
    if (!(r > 0.0)) {
        throw ArgumentError("basis direction must be non-zero");
    }
    const double z = std::clamp(direction.z() / r, -1.0, 1.0);
    const double rho = std::hypot(direction.x(), direction.y()) / r;
    fill_basis(l_max, z, rho, std::atan2(direction.y(), direction.x()), out);
}

std::vector<double> spherical_vertex_areas(const TriMesh& m, const SphericalParam& p) {
    if (p.positions.size() != static_cast<std::size_t>(m.vertex_count())) {
        throw ArgumentError("parameterisation does not match mesh");
    }
    std::vector<double> areas(p.positions.size(), 0.0);
    for (const auto& t : m.triangles) {
        const double third =
            solid_angle(p.positions[t[0]], p.positions[t[1]], p.positions[t[2]]) / 3.0;
        for (int v : t) {
            areas[v] += third;
        }
    }
    return areas;
}

std::vector<double> fit_scalar(std::span<const Eigen::Vector3d> directions,
                               std::span<const double> values, std::span<const double> weights,
                               int l_max, double damping) {
    if (values.size() != directions.size() || weights.size() != directions.size()) {
        throw ArgumentError("fit_scalar: directions, values and weights differ in length");
    }
    check_sample_count(directions.size(), l_max);
    const Eigen::MatrixXd b = design_matrix(directions, l_max);
    const Eigen::MatrixXd f =
        Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    const Eigen::VectorXd c = solve_weighted(b, weights, f, damping);
    return {c.data(), c.data() + c.size()};
}

ShCoeffs fit_coefficients(const TriMesh& m, const SphericalParam& p, int l_max) {
    if (p.positions.size() != static_cast<std::size_t>(m.vertex_count())) {
        throw ArgumentError("parameterisation does not match mesh");
    }
    check_sample_count(p.positions.size(), l_max);
    const std::vector<double> w = spherical_vertex_areas(m, p);
    const Eigen::MatrixXd b = design_matrix(p.positions, l_max);
    Eigen::MatrixXd f(m.vertex_count(), 3);
    for (int i = 0; i < m.vertex_count(); ++i) {
        f.row(i) = m.vertices[i].transpose();
    }
    const Eigen::MatrixXd c = solve_weighted(b, w, f, kFitDamping);

    ShCoeffs out(l_max);
    const int k = sh_count(l_max);
    for (int ch = 0; ch < 3; ++ch) {
        for (int j = 0; j < k; ++j) {
            out.coeffs[ch * k + j] = c(j, ch);
        }
    }
    return out;
}

Reconstruction reconstruct(const ShCoeffs& c, const SphericalParam& p, const TriMesh& m) {
    if (p.positions.size() != static_cast<std::size_t>(m.vertex_count())) {
        throw ArgumentError("parameterisation does not match mesh");
    }
    const int k = sh_count(c.l_max);
    std::vector<double> basis(k);
    Reconstruction r;
    r.points.reserve(p.positions.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < p.positions.size(); ++i) {
        real_sh_basis_all(c.l_max, p.positions[i], basis);
        Eigen::Vector3d q = Eigen::Vector3d::Zero();
        for (int ch = 0; ch < 3; ++ch) {
            const auto coeffs = c.channel(ch);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) {
                sum += coeffs[j] * basis[j];
            }
            q[ch] = sum;
        }
        sq += (q - m.vertices[i]).squaredNorm();
        r.points.push_back(q);
    }
    r.rms_error = r.points.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(r.points.size()));
    return r;
}

std::vector<double> truncate(const ShCoeffs& c, int n_per_channel) {
    const int k = sh_count(c.l_max);
    if (n_per_channel < 1 || n_per_channel > k) {
        throw ArgumentError("truncation count " + std::to_string(n_per_channel) +
                            " outside [1, " + std::to_string(k) + "]");
    }
    std::vector<double> out;
    out.reserve(3 * static_cast<std::size_t>(n_per_channel));
    for (int ch = 0; ch < 3; ++ch) {
        const auto coeffs = c.channel(ch);
        out.insert(out.end(), coeffs.begin(), coeffs.begin() + n_per_channel);
    }
    return out;
}

ShapeDescriptor degree_energy(const ShCoeffs& c, bool normalize_scale) {
    ShapeDescriptor d;
    d.mode = DescriptorMode::degree_energy;
    d.values.reserve(3 * static_cast<std::size_t>(c.l_max + 1));
    for (int ch = 0; ch < 3; ++ch) {
        for (int l = 0; l <= c.l_max; ++l) {
            double sum = 0.0;
            for (int m = -l; m <= l; ++m) {
                sum += c.at(ch, l, m) * c.at(ch, l, m);
            }
            d.values.push_back(std::sqrt(sum));
        }
    }
    if (normalize_scale && c.l_max >= 1) {
        const double scale = total_degree_energy(c)[1];
        if (scale > 0.0) {
            for (double& v : d.values) {
                v /= scale;
            }
        }
    }
    return d;
}

std::vector<double> total_degree_energy(const ShCoeffs& c) {
    std::vector<double> t(c.l_max + 1, 0.0);
    for (int ch = 0; ch < 3; ++ch) {
        for (int l = 0; l <= c.l_max; ++l) {
            for (int m = -l; m <= l; ++m) {
                t[l] += c.at(ch, l, m) * c.at(ch, l, m);
            }
        }
    }
    for (double& v : t) {
        v = std::sqrt(v);
    }
    return t;
}

CoeffDifference coeff_difference(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ArgumentError("coefficient vectors differ in length: " + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()));
    }
    CoeffDifference d;
    d.diff.resize(a.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d.diff[i] = a[i] - b[i];
        sq += d.diff[i] * d.diff[i];
    }
    d.norm = std::sqrt(sq);
    return d;
}

void write_coefficients_header(std::ostream& out) { out << "id,channel,l,m,value\n"; }

void write_coefficients_csv(std::ostream& out, const std::string& id, const ShCoeffs& c) {
    for (int ch = 0; ch < 3; ++ch) {
        for (int l = 0; l <= c.l_max; ++l) {
            for (int m = -l; m <= l; ++m) {
                out << id << ',' << kChannelNames[ch] << ',' << l << ',' << m << ','
                    << format_exact(c.at(ch, l, m)) << '\n';
            }
        }
    }
}

void write_descriptor_csv(std::ostream& out,
                          const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
    const std::size_t width = rows.empty() ? 0 : rows.front().second.size();
    out << "id";
    for (std::size_t i = 0; i < width; ++i) {
        out << ",f" << i;
    }
    out << '\n';
    for (const auto& [id, values] : rows) {
        if (values.size() != width) {
            throw ArgumentError("descriptor rows differ in length");
        }
        out << id;
        for (double v : values) {
            out << ',' << format_exact(v);
        }
        out << '\n';
    }
}

std::vector<std::pair<std::string, ShCoeffs>> read_coefficients_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open coefficient file " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "id,channel,l,m,value") {
        throw FormatError(path.string() + ": missing header id,channel,l,m,value");
    }
    struct Entry {
        int channel, l, m;
        double value;
    };
    std::vector<std::string> order;
    std::map<std::string, std::vector<Entry>> entries;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            fields.push_back(field);
        }
        if (fields.size() != 5) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
        }
        int channel = -1;
        for (int c = 0; c < 3; ++c) {
            if (fields[1].size() == 1 && fields[1][0] == kChannelNames[c]) {
                channel = c;
            }
        }
        if (channel < 0) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad channel");
        }
        const int l = parse_int(fields[2], "degree");
        const int m = parse_int(fields[3], "order");
        if (l < 0 || std::abs(m) > l) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad (l, m)");
        }
        auto [it, inserted] = entries.try_emplace(fields[0]);
        if (inserted) {
            order.push_back(fields[0]);
        }
        it->second.push_back({channel, l, m, parse_double(fields[4], "value")});
    }

    std::vector<std::pair<std::string, ShCoeffs>> out;
    for (const auto& id : order) {
        const auto& list = entries[id];
        int l_max = 0;
        for (const auto& e : list) {
            l_max = std::max(l_max, e.l);
        }
        ShCoeffs c(l_max);
        if (list.size() != c.coeffs.size()) {
            throw FormatError(path.string() + ": record '" + id + "' has " +
                              std::to_string(list.size()) + " coefficients, expected " +
                              std::to_string(c.coeffs.size()));
        }
        std::vector<bool> seen(c.coeffs.size(), false);
        for (const auto& e : list) {
            const std::size_t idx = e.channel * sh_count(l_max) + sh_index(e.l, e.m);
            if (seen[idx]) {
                throw FormatError(path.string() + ": duplicate coefficient in '" + id + "'");
            }
            seen[idx] = true;
            c.coeffs[idx] = e.value;
        }
        out.emplace_back(id, std::move(c));
    }
    return out;
}

}  // namespace nodule
