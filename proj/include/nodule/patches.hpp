#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nodule/image_io.hpp"
#include "nodule/volume.hpp"

namespace nodule {

inline constexpr double kRoiMargin = 1.1;
inline constexpr int kMontagePx = 227;

struct HuWindow {
    double lo = -1000.0;
    double hi = 400.0;
};

/// Square scalar patch, row-major: value(i, j) = values[j * px + i], where i runs
/// along the first plane axis and j along the second.
struct Patch2D {
    int px = 0;
    std::vector<double> values;

    [[nodiscard]] double at(int i, int j) const { return values[static_cast<std::size_t>(j) * px + i]; }
};

struct PcaAxes {
    Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();  // columns x', y', z'
    Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();
    bool fallback = false;  // identity used: < 4 voxels or rank < 2
};

/// Planes x'y', x'z', y'z' in that order.
struct PatchSet {
    std::array<Patch2D, 3> planes;
    double edge_mm = 0.0;
    int px = 0;
    PointMm center = PointMm::Zero();
    Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();
    bool axes_fallback = false;
};

/// Principal axes of the foreground voxel positions (mm), descending variance.
/// Each column's largest-magnitude entry is positive, except that the third
/// column is flipped when needed to make the frame right-handed. Eigenvalues
/// equal within 1e-9 relative share an eigenspace, whose basis is taken from the
/// coordinate axes with the largest projections, so a ball yields the identity.
PcaAxes pca_axes(const Volume& mask);

/// Largest physical bounding-box edge of the foreground: (max - min + 1) voxels * spacing.
/// Zero for an empty mask.
double bounding_box_edge(const Volume& mask);

/// Maximum bounding_box_edge over masks times margin. Throws ArgumentError for an
/// empty list or when every mask is empty.
double compute_roi_edge(std::span<const Volume> masks, double margin = kRoiMargin);

/// Samples the three planes through center with trilinear interpolation. Pixel i
/// lies at center + ((i + 0.5) / px - 0.5) * edge_mm along its plane axis.
PatchSet extract_triplanar(const Volume& v, const PointMm& center, const Eigen::Matrix3d& axes,
                           double edge_mm, int px);

/// Clamp to the window, map affinely onto 0..255, round half away from zero.
std::uint8_t window_value(double hu, const HuWindow& window);
std::vector<std::uint8_t> window_normalize(const Patch2D& p, const HuWindow& window);

/// Windowed planes in the R, G, B channels, bilinearly resized to out_px.
RgbImage montage_rgb(const PatchSet& ps, const HuWindow& window = {}, int out_px = kMontagePx);

/// Writes `<id>_rgb.png` and `<id>_rgb.json` (center, axes, edge_mm, px, window) into dir.
void write_patch_outputs(const std::filesystem::path& dir, const std::string& id,
                         const RgbImage& image, const PatchSet& ps, const HuWindow& window);

}  // namespace nodule
