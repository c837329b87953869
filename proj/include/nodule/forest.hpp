#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace nodule {

struct ForestParams {
    int n_trees = 200;
    int features_per_split = 0;  // 0: floor(sqrt(d))
    int min_leaf = 1;
    int max_depth = -1;  // negative: unlimited
    std::uint64_t seed = 0;

    /// features_per_split with the default resolved for dimension d.
    [[nodiscard]] int resolved_features(int d) const;
    void validate(int d) const;
};

/// Internal nodes have feature >= 0 and go left when x[feature] <= threshold.
/// Leaves have feature == -1 and per-class counts aligned with Forest::classes.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<int> counts;

    [[nodiscard]] bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // root at 0
};

struct Forest {
    std::vector<int> classes;  // ascending
    int d = 0;
    ForestParams params;
    std::vector<Tree> trees;
};

struct Prediction {
    int rating = 0;
    std::map<int, int> votes;
};

/// Gini impurity 1 - sum p_k^2 of a class histogram; 0 for an empty histogram.
double gini_impurity(std::span<const int> counts);

/// Size-weighted mean Gini of a binary split, (n_l G_l + n_r G_r) / n, evaluated
/// as ((n_l^2 - sum l_k^2) / n_l + (n_r^2 - sum r_k^2) / n_r) / n. Training scores
/// candidate splits with the same expression.
double split_impurity(std::span<const int> left, std::span<const int> right);

/// Each tree grows on a bootstrap sample drawn from an mt19937_64 seeded with
/// seed + tree index, so the forest does not depend on `jobs`.
Forest train(const std::vector<std::vector<double>>& x, std::span<const int> y,
             const ForestParams& params, int jobs = 1);

Prediction predict(const Forest& f, std::span<const double> x);

inline constexpr int kForestFormatVersion = 1;

/// Canonical JSON: equal forests serialise to equal bytes.
std::string forest_to_json(const Forest& f);
Forest forest_from_json(const std::string& text);
void save_forest(const Forest& f, const std::filesystem::path& path);
Forest load_forest(const std::filesystem::path& path);

}  // namespace nodule
