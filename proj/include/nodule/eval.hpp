#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nodule/forest.hpp"
#include "nodule/spharm.hpp"
#include "nodule/volume.hpp"

namespace nodule {

/// One segmentation of one nodule by one annotator.
struct NoduleRecord {
    std::string id;
    int rating = 0;
    std::string annotator;
    PointMm center = PointMm::Zero();
    std::filesystem::path mask_path;
    std::filesystem::path volume_path;
};

/// Labels CSV with header `id,rating,annotator,center_x_mm,center_y_mm,center_z_mm,mask_path,volume_path`.
/// Relative paths are resolved against the CSV's directory.
std::vector<NoduleRecord> read_labels_csv(const std::filesystem::path& path);
/// Paths inside the CSV's directory are written relative to it.
void write_labels_csv(const std::filesystem::path& path, const std::vector<NoduleRecord>& records);

using Group = std::vector<int>;  // record indices, ascending

/// Single-linkage components of the graph joining records whose centres lie
/// within threshold_mm. Groups are ordered by their smallest record index.
std::vector<Group> group_nodules(std::span<const NoduleRecord> records, double threshold_mm = 5.0);

struct GroupedSplit {
    std::vector<Group> groups;
    std::vector<std::vector<int>> folds;  // group indices per fold

    /// Record indices of fold f, ascending.
    [[nodiscard]] std::vector<int> fold_records(int f) const;
};

/// Fisher-Yates shuffle of the groups (mt19937_64, seed), then round-robin into k folds.
GroupedSplit kfold_split(std::vector<Group> groups, int k, std::uint64_t seed);

double off_by_one_accuracy(std::span<const int> pred, std::span<const int> truth);
double exact_accuracy(std::span<const int> pred, std::span<const int> truth);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
};

/// t = (mean_a - mean_b) / sqrt(s_a^2/n_a + s_b^2/n_b) with n-1 variances and
/// Welch-Satterthwaite df. Throws UndefinedStatisticError when both variances vanish.
WelchResult welch_t(std::span<const double> a, std::span<const double> b);

/// Groups with at least min_annot distinct annotators.
std::vector<Group> filter_min_annotations(std::span<const NoduleRecord> records,
                                          const std::vector<Group>& groups, int min_annot);

enum class Mode { shape_only, appearance_only, hybrid };
const char* mode_name(Mode m);

struct AblationConfig {
    std::vector<Mode> modes{Mode::shape_only, Mode::appearance_only, Mode::hybrid};
    std::vector<int> sh_counts{100, 150, 400};
    std::vector<int> min_annotations{1, 2};
    int k_folds = 10;
    double group_threshold_mm = 5.0;
    std::uint64_t seed = 0;
    ForestParams forest;
    int jobs = 1;
};

struct FoldResult {
    Mode mode = Mode::shape_only;
    int n_sh = 0;
    int min_annot = 0;
    int fold = 0;
    double off_by_one = 0.0;
    double exact = 0.0;
};

struct SummaryRow {
    Mode mode = Mode::shape_only;
    int n_sh = 0;
    int min_annot = 0;
    int n_records = 0;
    double off_by_one_mean = 0.0;
    double off_by_one_std = 0.0;
    double exact_mean = 0.0;
    double exact_std = 0.0;
};

struct Report {
    std::vector<FoldResult> folds;
    std::vector<SummaryRow> summary;  // one row per (mode, n_sh, min_annot)
};

/// Inputs keyed by record id. A record lacking a feature needed by a mode is
/// dropped from that mode; a mode whose feature source is entirely absent raises ConfigError.
struct AblationData {
    std::vector<NoduleRecord> records;
    std::map<std::string, ShCoeffs> shape;
    std::map<std::string, std::vector<double>> appearance;
};

/// Grouped k-fold evaluation of every (mode, n_sh, min_annot). Folds are drawn
/// once per min_annot filter and shared by all modes, so modes are compared on
/// identical splits. Fold metrics are averaged without weighting; std uses k - 1.
Report run_ablation(const AblationData& data, const AblationConfig& config);

/// `mode,n_sh,min_annot,fold,off_by_one,exact`.
void write_report_csv(std::ostream& out, const Report& r);
/// `mode,n_sh,min_annot,n_records,off_by_one_mean,off_by_one_std,exact_mean,exact_std`.
void write_summary_csv(std::ostream& out, const Report& r);
/// Min-annotation x coefficient-count table with one column per mode.
std::string format_report_table(const Report& r);

}  // namespace nodule
