#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nodule/eval.hpp"
#include "nodule/features.hpp"
#include "nodule/forest.hpp"
#include "nodule/patches.hpp"
#include "nodule/spharm.hpp"
#include "nodule/spherical_map.hpp"

namespace nodule {

/// Settings shared by all stages. JSON keys match the field names; see README.
struct PipelineConfig {
    double iso_spacing_mm = 1.0;
    int smoothing_steps = 1;
    MapOptions map;
    int l_max = kDefaultLMax;
    std::vector<int> sh_counts{100, 150, 400};
    double roi_margin = kRoiMargin;
    int patch_px = kMontagePx;
    int image_px = kMontagePx;
    HuWindow hu_window;
    ForestParams forest;
    int k_folds = 10;
    std::vector<int> min_annotations{1, 2};
    double group_threshold_mm = 5.0;
    std::uint64_t seed = 0;
    int jobs = 0;  // 0: all logical cores
    bool write_energy_traces = false;
    bool use_baseline_appearance = true;
    std::filesystem::path labels_csv;
    std::filesystem::path external_features_csv;
    std::filesystem::path output_dir = "out";

    /// Throws ConfigError naming the first out-of-range field.
    void validate() const;
};

/// Parses a JSON object over the defaults. Unknown keys and wrong types raise ConfigError.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig config_from_json(const std::string& text, PipelineConfig base = {});
std::string config_to_json(const PipelineConfig& c);

/// Records processed by a batch stage and how many were skipped.
struct StageStatus {
    int total = 0;
    int failed = 0;

    /// More than 10% of records failed.
    [[nodiscard]] bool excessive() const noexcept { return total > 0 && failed * 10 > total; }
};

struct ShapeResult {
    TriMesh mesh;  // cleaned, smoothed, centred on the mask centre of mass
    SphericalParam param;
    ShCoeffs coeffs;
    MapResult map;
    double rms_error = 0.0;
};

/// Mask -> isotropic resample -> marching cubes -> islands/holes -> smoothing
/// -> genus-zero check -> conformal map -> SH fit.
ShapeResult shape_from_mask(const Volume& mask, const PipelineConfig& c);

/// Fit of an already cleaned genus-zero mesh (no centring).
ShapeResult shape_from_mesh(const TriMesh& mesh, const PipelineConfig& c);

/// Paths of stage outputs under output_dir.
struct OutputLayout {
    std::filesystem::path root;
    [[nodiscard]] std::filesystem::path coefficients() const { return root / "shape" / "coefficients.csv"; }
    [[nodiscard]] std::filesystem::path shape_diagnostics() const { return root / "shape" / "diagnostics.csv"; }
    [[nodiscard]] std::filesystem::path traces_dir() const { return root / "shape" / "traces"; }
    [[nodiscard]] std::filesystem::path patches_dir() const { return root / "patches"; }
    [[nodiscard]] std::filesystem::path baseline_features() const {
        return root / "features" / "appearance_baseline.csv";
    }
    [[nodiscard]] std::filesystem::path forest() const { return root / "model" / "forest.json"; }
    [[nodiscard]] std::filesystem::path predictions() const { return root / "predictions.csv"; }
    [[nodiscard]] std::filesystem::path report() const { return root / "eval" / "report.csv"; }
    [[nodiscard]] std::filesystem::path summary() const { return root / "eval" / "summary.csv"; }
    [[nodiscard]] std::filesystem::path table() const { return root / "eval" / "table.txt"; }
};

StageStatus run_shape_stage(const PipelineConfig& c, const std::vector<NoduleRecord>& records);
StageStatus run_patches_stage(const PipelineConfig& c, const std::vector<NoduleRecord>& records);
StageStatus run_baseline_features_stage(const PipelineConfig& c, const std::vector<NoduleRecord>& records);

/// Appearance source per config: the external CSV when given, else the baseline
/// CSV when enabled, else empty.
std::map<std::string, std::vector<double>> load_appearance(const PipelineConfig& c);
std::map<std::string, ShCoeffs> load_shape(const PipelineConfig& c);

/// Feature vector of one record for a mode; nullopt when a source lacks the id.
std::optional<std::vector<double>> mode_features(Mode mode, int n_sh, const std::string& id,
                                                 const std::map<std::string, ShCoeffs>& shape,
                                                 const std::map<std::string, std::vector<double>>& appearance);

Mode parse_mode(const std::string& name);

/// Trains on every record with the requested features and saves the forest.
Forest run_train(const PipelineConfig& c, const std::vector<NoduleRecord>& records, Mode mode, int n_sh);

/// Writes `id,rating,truth,votes` rows (votes as `r:n` pairs joined by `;`); a forest/feature dimension mismatch raises ConfigError.
StageStatus run_predict(const PipelineConfig& c, const std::vector<NoduleRecord>& records, Mode mode,
                        int n_sh, const std::filesystem::path& forest_path);

Report run_eval(const PipelineConfig& c, const std::vector<NoduleRecord>& records);

}  // namespace nodule
