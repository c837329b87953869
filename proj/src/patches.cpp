#include "nodule/patches.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "nodule/error.hpp"

namespace nodule {

namespace {

constexpr double kEigenTieTol = 1e-9;
constexpr double kRankTol = 1e-12;

// Orthonormal basis of span(q) built from the coordinate axes with the largest
// projections (ties to the lower axis index).
std::vector<Eigen::Vector3d> canonical_basis(const Eigen::MatrixXd& q) {
    std::vector<Eigen::Vector3d> basis;
    std::array<bool, 3> used{false, false, false};
    while (basis.size() < static_cast<std::size_t>(q.cols())) {
        int best = -1;
        double best_norm = -1.0;
        Eigen::Vector3d best_vec;
        for (int a = 0; a < 3; ++a) {
            if (used[a]) {
                continue;
            }
            Eigen::Vector3d v = q * (q.transpose() * Eigen::Vector3d::Unit(a));
            for (const auto& b : basis) {
                v -= v.dot(b) * b;
            }
            if (v.norm() > best_norm + 1e-12) {
                best = a;
                best_norm = v.norm();
                best_vec = v;
            }
        }
        used[best] = true;
        basis.push_back(best_vec.normalized());
    }
    return basis;
}

void make_largest_entry_positive(Eigen::Ref<Eigen::Vector3d> col) {
    int idx = 0;
    for (int r = 1; r < 3; ++r) {
        if (std::abs(col[r]) > std::abs(col[idx]) + 1e-12) {
            idx = r;
        }
    }
    if (col[idx] < 0.0) {
        col = -col;
    }
}

Patch2D sample_plane(const Volume& v, const PointMm& center, const Eigen::Vector3d& u,
                     const Eigen::Vector3d& w, double edge_mm, int px) {
    Patch2D p;
    p.px = px;
    p.values.resize(static_cast<std::size_t>(px) * px);
    for (int j = 0; j < px; ++j) {
        const double t = ((j + 0.5) / px - 0.5) * edge_mm;
        for (int i = 0; i < px; ++i) {
            const double s = ((i + 0.5) / px - 0.5) * edge_mm;
            p.values[static_cast<std::size_t>(j) * px + i] = trilinear_sample(v, center + s * u + t * w);
        }
    }
    return p;
}

// Pixel-centre aligned bilinear resize with edge clamping.
std::vector<std::uint8_t> resize_bilinear(const std::vector<std::uint8_t>& src, int n, int out) {
    if (n == out) {
        return src;
    }
    std::vector<std::uint8_t> dst(static_cast<std::size_t>(out) * out);
    auto coord = [&](int o, int& i0, int& i1, double& f) {
        const double x = std::clamp((o + 0.5) * n / out - 0.5, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<int>(std::floor(x));
        i1 = std::min(i0 + 1, n - 1);
        f = x - i0;
    };
    for (int y = 0; y < out; ++y) {
        int y0 = 0, y1 = 0;
        double fy = 0.0;
        coord(y, y0, y1, fy);
        for (int x = 0; x < out; ++x) {
            int x0 = 0, x1 = 0;
            double fx = 0.0;
            coord(x, x0, x1, fx);
            auto px = [&](int a, int b) { return static_cast<double>(src[static_cast<std::size_t>(b) * n + a]); };
            const double val = (1 - fy) * ((1 - fx) * px(x0, y0) + fx * px(x1, y0)) +
                               fy * ((1 - fx) * px(x0, y1) + fx * px(x1, y1));
            dst[static_cast<std::size_t>(y) * out + x] =
                static_cast<std::uint8_t>(std::clamp(std::round(val), 0.0, 255.0));
        }
    }
    return dst;
}

}  // namespace

PcaAxes pca_axes(const Volume& mask) {
    if (!mask.is_mask()) {
        throw ArgumentError("pca_axes expects a mask volume");
    }
    PcaAxes out;
    std::vector<PointMm> pts;
    for (int k = 0; k < mask.dims[2]; ++k) {
        for (int j = 0; j < mask.dims[1]; ++j) {
            for (int i = 0; i < mask.dims[0]; ++i) {
                if (mask.at(i, j, k) >= 0.5F) {
                    pts.push_back(mask.physical(i, j, k));
                }
            }
        }
    }
    if (pts.size() < 4) {
        out.fallback = true;
        return out;
    }
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) {
        mean += p;
    }
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        cov += (p - mean) * (p - mean).transpose();
    }
    cov /= static_cast<double>(pts.size());

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    // Ascending from Eigen; reverse to descending.
    Eigen::Vector3d vals = es.eigenvalues().reverse();
    Eigen::Matrix3d vecs = es.eigenvectors().rowwise().reverse();
    if (!(vals[0] > 0.0) || vals[1] <= kRankTol * vals[0]) {
        out.fallback = true;
        return out;
    }

    Eigen::Matrix3d axes;
    int col = 0;
    while (col < 3) {
        int end = col + 1;
        while (end < 3 && std::abs(vals[end] - vals[col]) <= kEigenTieTol * vals[0]) {
            ++end;
        }
        if (end - col == 1) {
            axes.col(col) = vecs.col(col);
        } else {
            const auto basis = canonical_basis(vecs.middleCols(col, end - col));
            for (int c = col; c < end; ++c) {
                axes.col(c) = basis[c - col];
            }
        }
        col = end;
    }
    for (int c = 0; c < 3; ++c) {
        make_largest_entry_positive(axes.col(c));
    }
    if (axes.determinant() < 0.0) {
        axes.col(2) = -axes.col(2);
    }
    out.axes = axes;
    out.eigenvalues = vals;
    return out;
}

double bounding_box_edge(const Volume& mask) {
    std::array<int, 3> lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
                          std::numeric_limits<int>::max()};
    std::array<int, 3> hi{-1, -1, -1};
    for (int k = 0; k < mask.dims[2]; ++k) {
        for (int j = 0; j < mask.dims[1]; ++j) {
            for (int i = 0; i < mask.dims[0]; ++i) {
                if (mask.at(i, j, k) >= 0.5F) {
                    const std::array<int, 3> idx{i, j, k};
                    for (int a = 0; a < 3; ++a) {
                        lo[a] = std::min(lo[a], idx[a]);
                        hi[a] = std::max(hi[a], idx[a]);
                    }
                }
            }
        }
    }
    if (hi[0] < 0) {
        return 0.0;
    }
    double edge = 0.0;
    for (int a = 0; a < 3; ++a) {
        edge = std::max(edge, (hi[a] - lo[a] + 1) * mask.spacing[a]);
    }
    return edge;
}

double compute_roi_edge(std::span<const Volume> masks, double margin) {
    if (masks.empty()) {
        throw ArgumentError("compute_roi_edge needs at least one mask");
    }
    if (!(margin > 0.0)) {
        throw ArgumentError("ROI margin must be positive");
    }
    double edge = 0.0;
    for (const auto& m : masks) {
        edge = std::max(edge, bounding_box_edge(m));
    }
    if (edge <= 0.0) {
        throw ArgumentError("compute_roi_edge: every mask is empty");
    }
    return edge * margin;
}

PatchSet extract_triplanar(const Volume& v, const PointMm& center, const Eigen::Matrix3d& axes,
                           double edge_mm, int px) {
    if (px < 8) {
        throw ArgumentError("patch size must be at least 8 pixels");
    }
    if (!(edge_mm > 0.0) || !std::isfinite(edge_mm)) {
        throw ArgumentError("ROI edge must be positive");
    }
    PatchSet ps;
    ps.edge_mm = edge_mm;
    ps.px = px;
    ps.center = center;
    ps.axes = axes;
    ps.planes[0] = sample_plane(v, center, axes.col(0), axes.col(1), edge_mm, px);
    ps.planes[1] = sample_plane(v, center, axes.col(0), axes.col(2), edge_mm, px);
    ps.planes[2] = sample_plane(v, center, axes.col(1), axes.col(2), edge_mm, px);
    return ps;
}

std::uint8_t window_value(double hu, const HuWindow& window) {
    const double t = (std::clamp(hu, window.lo, window.hi) - window.lo) / (window.hi - window.lo);
    return static_cast<std::uint8_t>(std::round(t * 255.0));
}

std::vector<std::uint8_t> window_normalize(const Patch2D& p, const HuWindow& window) {
    if (!(window.lo < window.hi)) {
        throw ArgumentError("HU window needs lo < hi");
    }
    std::vector<std::uint8_t> out(p.values.size());
    std::transform(p.values.begin(), p.values.end(), out.begin(),
                   [&](double hu) { return window_value(hu, window); });
    return out;
}

RgbImage montage_rgb(const PatchSet& ps, const HuWindow& window, int out_px) {
    if (out_px < 1) {
        throw ArgumentError("output size must be positive");
    }
    RgbImage img(out_px, out_px);
    for (int c = 0; c < 3; ++c) {
        img.channels[c] = resize_bilinear(window_normalize(ps.planes[c], window), ps.px, out_px);
    }
    return img;
}

void write_patch_outputs(const std::filesystem::path& dir, const std::string& id,
                         const RgbImage& image, const PatchSet& ps, const HuWindow& window) {
    write_png(image, dir / (id + "_rgb.png"));
    nlohmann::ordered_json j;
    j["id"] = id;
    j["center_mm"] = {ps.center.x(), ps.center.y(), ps.center.z()};
    nlohmann::ordered_json cols = nlohmann::ordered_json::array();
    for (int c = 0; c < 3; ++c) {
        cols.push_back({ps.axes(0, c), ps.axes(1, c), ps.axes(2, c)});
    }
    j["axes"] = cols;
    j["axes_fallback"] = ps.axes_fallback;
    j["edge_mm"] = ps.edge_mm;
    j["patch_px"] = ps.px;
    j["image_px"] = image.width;
    j["hu_window"] = {window.lo, window.hi};
    std::ofstream out(dir / (id + "_rgb.json"));
    if (!out) {
        throw IoError("cannot write sidecar for " + id);
    }
    out << j.dump(2) << '\n';
}

}  // namespace nodule
