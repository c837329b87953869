#include "nodule/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nodule/error.hpp"
#include "nodule/parallel.hpp"
#include "nodule/random.hpp"

namespace nodule {

namespace {

constexpr double kImpurityEps = 1e-12;

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;
};

bool better(const Split& cand, const Split& best) {
    if (best.feature < 0) {
        return true;
    }
    if (cand.impurity < best.impurity - kImpurityEps) {
        return true;
    }
    if (cand.impurity > best.impurity + kImpurityEps) {
        return false;
    }
    if (cand.feature != best.feature) {
        return cand.feature < best.feature;
    }
    return cand.threshold < best.threshold;
}

class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<int>& y, int n_classes,
                const ForestParams& params, int d)
        : x_(x), y_(y), k_(n_classes), params_(params), d_(d), mtry_(params.resolved_features(d)) {}

    Tree build(Rng& rng) {
        const std::size_t n = x_.size();
        std::vector<int> samples(n);
        for (auto& s : samples) {
            s = static_cast<int>(uniform_index(rng, n));
        }
        Tree tree;
        tree.nodes.emplace_back();
        struct Task {
            int node;
            std::size_t begin, end;
            int depth;
        };
        std::vector<Task> stack{{0, 0, n, 0}};
        std::vector<int> perm(d_);
        while (!stack.empty()) {
            const Task task = stack.back();
            stack.pop_back();
            std::vector<int> counts(k_, 0);
            for (std::size_t i = task.begin; i < task.end; ++i) {
                ++counts[y_[samples[i]]];
            }
            const std::size_t size = task.end - task.begin;
            const double parent = gini_impurity(counts);
            const bool stop = parent <= 0.0 || size < 2 * static_cast<std::size_t>(params_.min_leaf) ||
                              (params_.max_depth >= 0 && task.depth >= params_.max_depth);
            Split best;
            if (!stop) {
                best = find_split(samples, task.begin, task.end, counts, rng, perm);
            }
            if (stop || best.feature < 0 || !(best.impurity < parent - kImpurityEps)) {
                tree.nodes[task.node].counts = std::move(counts);
                continue;
            }
            auto mid = std::partition(samples.begin() + static_cast<std::ptrdiff_t>(task.begin),
                                      samples.begin() + static_cast<std::ptrdiff_t>(task.end),
                                      [&](int s) { return x_[s][best.feature] <= best.threshold; });
            const std::size_t split_at = static_cast<std::size_t>(mid - samples.begin());
            const int left = static_cast<int>(tree.nodes.size());
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            TreeNode& node = tree.nodes[task.node];
            node.feature = best.feature;
            node.threshold = best.threshold;
            node.left = left;
            node.right = left + 1;
            // Right pushed first so the left subtree is expanded first.
            stack.push_back({left + 1, split_at, task.end, task.depth + 1});
            stack.push_back({left, task.begin, split_at, task.depth + 1});
        }
        return tree;
    }

private:
    // Draws features without replacement until mtry non-constant ones were scored.
    Split find_split(const std::vector<int>& samples, std::size_t begin, std::size_t end,
                     const std::vector<int>& total, Rng& rng, std::vector<int>& perm) {
        std::iota(perm.begin(), perm.end(), 0);
        Split best;
        int scored = 0;
        std::vector<std::pair<double, int>> vals(end - begin);
        std::vector<int> left(k_);
        const double n = static_cast<double>(end - begin);
        for (int drawn = 0; drawn < d_ && scored < mtry_; ++drawn) {
            const int j = drawn + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(d_ - drawn)));
            std::swap(perm[drawn], perm[j]);
            const int f = perm[drawn];
            for (std::size_t i = begin; i < end; ++i) {
                vals[i - begin] = {x_[samples[i]][f], y_[samples[i]]};
            }
            std::sort(vals.begin(), vals.end());
            if (vals.front().first == vals.back().first) {
                continue;
            }
            ++scored;
            std::fill(left.begin(), left.end(), 0);
            double sq_left = 0.0;
            double sq_right = 0.0;
            for (int c = 0; c < k_; ++c) {
                sq_right += static_cast<double>(total[c]) * total[c];
            }
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                const int c = vals[i].second;
                const double l_old = left[c];
                const double r_old = total[c] - l_old;
                sq_left += 2.0 * l_old + 1.0;
                sq_right -= 2.0 * r_old - 1.0;
                ++left[c];
                if (vals[i].first == vals[i + 1].first) {
                    continue;
                }
                const double nl = static_cast<double>(i + 1);
                const double nr = n - nl;
                if (nl < params_.min_leaf || nr < params_.min_leaf) {
                    continue;
                }
                const double impurity = ((nl * nl - sq_left) / nl + (nr * nr - sq_right) / nr) / n;
                double thr = 0.5 * (vals[i].first + vals[i + 1].first);
                if (!(thr < vals[i + 1].first)) {
                    thr = vals[i].first;
                }
                const Split cand{f, thr, impurity};
                if (better(cand, best)) {
                    best = cand;
                }
            }
        }
        return best;
    }

    const std::vector<std::vector<double>>& x_;
    const std::vector<int>& y_;
    int k_;
    const ForestParams& params_;
    int d_;
    int mtry_;
};

int leaf_vote(const TreeNode& leaf) {
    // max_element returns the first maximum, i.e. the lower label on ties.
    return static_cast<int>(std::max_element(leaf.counts.begin(), leaf.counts.end()) - leaf.counts.begin());
}

}  // namespace

int ForestParams::resolved_features(int d) const {
    if (features_per_split > 0) {
        return features_per_split;
    }
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
}

void ForestParams::validate(int d) const {
    if (n_trees < 1) {
        throw ArgumentError("n_trees must be at least 1");
    }
    if (features_per_split < 0 || resolved_features(d) > d) {
        throw ArgumentError("features_per_split must lie in [1, " + std::to_string(d) + "]");
    }
    if (min_leaf < 1) {
        throw ArgumentError("min_leaf must be at least 1");
    }
}

double gini_impurity(std::span<const int> counts) {
    double total = 0.0;
    double sq = 0.0;
    for (int c : counts) {
        total += c;
        sq += static_cast<double>(c) * c;
    }
    return total > 0.0 ? (total * total - sq) / (total * total) : 0.0;
}

double split_impurity(std::span<const int> left, std::span<const int> right) {
    double nl = 0.0, nr = 0.0, sq_left = 0.0, sq_right = 0.0;
    for (int c : left) {
        nl += c;
        sq_left += static_cast<double>(c) * c;
    }
    for (int c : right) {
        nr += c;
        sq_right += static_cast<double>(c) * c;
    }
    if (nl <= 0.0 || nr <= 0.0) {
        throw ArgumentError("split_impurity: both sides must be non-empty");
    }
    return ((nl * nl - sq_left) / nl + (nr * nr - sq_right) / nr) / (nl + nr);
}

Forest train(const std::vector<std::vector<double>>& x, std::span<const int> y,
             const ForestParams& params, int jobs) {
    if (x.empty()) {
        throw ArgumentError("train: no samples");
    }
    if (x.size() != y.size()) {
        throw ArgumentError("train: " + std::to_string(x.size()) + " samples but " +
                            std::to_string(y.size()) + " labels");
    }
    if (x.size() < 2) {
        throw ArgumentError("train: at least two samples are required");
    }
    const int d = static_cast<int>(x.front().size());
    if (d < 1) {
        throw ArgumentError("train: zero-dimensional features");
    }
    for (const auto& row : x) {
        if (static_cast<int>(row.size()) != d) {
            throw ArgumentError("train: inconsistent feature dimension");
        }
        for (double v : row) {
            if (!std::isfinite(v)) {
                throw ArgumentError("train: non-finite feature value");
            }
        }
    }
    params.validate(d);

    Forest f;
    f.d = d;
    f.params = params;
    f.classes.assign(y.begin(), y.end());
    std::sort(f.classes.begin(), f.classes.end());
    f.classes.erase(std::unique(f.classes.begin(), f.classes.end()), f.classes.end());
    std::vector<int> yi(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        yi[i] = static_cast<int>(std::lower_bound(f.classes.begin(), f.classes.end(), y[i]) - f.classes.begin());
    }

    f.trees.resize(params.n_trees);
    const int k = static_cast<int>(f.classes.size());
    parallel_for(f.trees.size(), jobs, [&](std::size_t t) {
        Rng rng(params.seed + t);
        TreeBuilder builder(x, yi, k, params, d);
        f.trees[t] = builder.build(rng);
    });
    return f;
}

Prediction predict(const Forest& f, std::span<const double> x) {
    if (static_cast<int>(x.size()) != f.d) {
        throw ArgumentError("predict: feature dimension " + std::to_string(x.size()) +
                            " does not match forest dimension " + std::to_string(f.d));
    }
    std::vector<int> tally(f.classes.size(), 0);
    for (const auto& tree : f.trees) {
        int node = 0;
        while (!tree.nodes[node].is_leaf()) {
            const auto& n = tree.nodes[node];
            node = x[n.feature] <= n.threshold ? n.left : n.right;
        }
        ++tally[leaf_vote(tree.nodes[node])];
    }
    Prediction p;
    int best = 0;
    for (std::size_t c = 0; c < tally.size(); ++c) {
        if (tally[c] > 0) {
            p.votes[f.classes[c]] = tally[c];
        }
        if (tally[c] > tally[best]) {
            best = static_cast<int>(c);
        }
    }
    p.rating = f.classes[best];
    return p;
}

std::string forest_to_json(const Forest& f) {
    nlohmann::ordered_json j;
    j["format_version"] = kForestFormatVersion;
    j["d"] = f.d;
    j["classes"] = f.classes;
    j["params"] = {{"n_trees", f.params.n_trees},
                   {"features_per_split", f.params.features_per_split},
                   {"min_leaf", f.params.min_leaf},
                   {"max_depth", f.params.max_depth},
                   {"seed", f.params.seed}};
    auto trees = nlohmann::ordered_json::array();
    for (const auto& t : f.trees) {
        nlohmann::ordered_json jt;
        std::vector<int> feature, left, right;
        std::vector<double> threshold;
        auto counts = nlohmann::ordered_json::array();
        for (const auto& n : t.nodes) {
            feature.push_back(n.feature);
            threshold.push_back(n.threshold);
            left.push_back(n.left);
            right.push_back(n.right);
            counts.push_back(n.counts);
        }
        jt["feature"] = feature;
        jt["threshold"] = threshold;
        jt["left"] = left;
        jt["right"] = right;
        jt["counts"] = counts;
        trees.push_back(std::move(jt));
    }
    j["trees"] = std::move(trees);
    return j.dump();
}

Forest forest_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt forest file: ") + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != kForestFormatVersion) {
            throw FormatError("unsupported forest format_version " + j.at("format_version").dump());
        }
        Forest f;
        f.d = j.at("d").get<int>();
        f.classes = j.at("classes").get<std::vector<int>>();
        const auto& p = j.at("params");
        f.params.n_trees = p.at("n_trees").get<int>();
        f.params.features_per_split = p.at("features_per_split").get<int>();
        f.params.min_leaf = p.at("min_leaf").get<int>();
        f.params.max_depth = p.at("max_depth").get<int>();
        f.params.seed = p.at("seed").get<std::uint64_t>();
        if (f.d < 1 || f.classes.empty() || !std::is_sorted(f.classes.begin(), f.classes.end())) {
            throw FormatError("forest header is inconsistent");
        }
        const int k = static_cast<int>(f.classes.size());
        for (const auto& jt : j.at("trees")) {
            const auto feature = jt.at("feature").get<std::vector<int>>();
            const auto threshold = jt.at("threshold").get<std::vector<double>>();
            const auto left = jt.at("left").get<std::vector<int>>();
            const auto right = jt.at("right").get<std::vector<int>>();
            const auto counts = jt.at("counts").get<std::vector<std::vector<int>>>();
            const std::size_t n = feature.size();
            if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || counts.size() != n) {
                throw FormatError("forest tree arrays differ in length");
            }
            Tree t;
            t.nodes.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                auto& node = t.nodes[i];
                node.feature = feature[i];
                node.threshold = threshold[i];
                node.left = left[i];
                node.right = right[i];
                node.counts = counts[i];
                if (node.is_leaf()) {
                    const bool ok = static_cast<int>(node.counts.size()) == k &&
                                    std::all_of(node.counts.begin(), node.counts.end(), [](int c) { return c >= 0; }) &&
                                    std::any_of(node.counts.begin(), node.counts.end(), [](int c) { return c > 0; });
                    if (!ok) {
                        throw FormatError("forest leaf has invalid class counts");
                    }
                } else if (node.feature >= f.d || node.left <= static_cast<int>(i) ||
                           node.right <= static_cast<int>(i) || node.left >= static_cast<int>(n) ||
                           node.right >= static_cast<int>(n)) {
                    throw FormatError("forest node references are out of range");
                }
            }
            f.trees.push_back(std::move(t));
        }
        if (static_cast<int>(f.trees.size()) != f.params.n_trees) {
            throw FormatError("forest tree count does not match n_trees");
        }
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed forest file: ") + e.what());
    }
}

void save_forest(const Forest& f, const std::filesystem::path& path) {
    if (path.empty()) {
        throw IoError("save_forest: empty path");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write forest " + path.string());
    }
    out << forest_to_json(f) << '\n';
    if (!out) {
        throw IoError("failed writing forest " + path.string());
    }
}

Forest load_forest(const std::filesystem::path& path) {
    if (path.empty()) {
        throw IoError("load_forest: empty path");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read forest " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return forest_from_json(ss.str());
}

}  // namespace nodule
