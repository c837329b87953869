#include "nodule/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "nodule/error.hpp"
#include "nodule/log.hpp"
#include "nodule/parallel.hpp"
#include "nodule/random.hpp"

namespace nodule {

namespace {

constexpr const char* kLabelsHeader =
    "id,rating,annotator,center_x_mm,center_y_mm,center_z_mm,mask_path,volume_path";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

double parse_number(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) {
        throw FormatError(where + ": expected a number, got '" + s + "'");
    }
    return v;
}

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
    int find(int a) {
        while (parent_[a] != a) {
            parent_[a] = parent_[parent_[a]];
            a = parent_[a];
        }
        return a;
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

void check_pair(std::span<const int> pred, std::span<const int> truth) {
    if (pred.size() != truth.size()) {
        throw ArgumentError("prediction and truth differ in length");
    }
    if (pred.empty()) {
        throw ArgumentError("accuracy of an empty prediction set is undefined");
    }
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) {
        ss += (x - m) * (x - m);
    }
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string format_fixed(double v, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::vector<NoduleRecord> read_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open labels file " + path.string());
    }
    const auto base = path.parent_path();
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(path.string() + ": empty labels file");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kLabelsHeader) {
        throw FormatError(path.string() + ": expected header " + kLabelsHeader);
    }
    std::vector<NoduleRecord> records;
    std::set<std::string> ids;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        const auto f = split_csv_line(line);
        if (f.size() != 8) {
            throw FormatError(where + ": expected 8 fields, got " + std::to_string(f.size()));
        }
        NoduleRecord r;
        r.id = f[0];
        if (r.id.empty() || !ids.insert(r.id).second) {
            throw FormatError(where + ": empty or duplicate id '" + r.id + "'");
        }
        const double rating = parse_number(f[1], where);
        if (rating != std::floor(rating) || rating < 1 || rating > 5) {
            throw FormatError(where + ": rating must be an integer 1..5");
        }
        r.rating = static_cast<int>(rating);
        r.annotator = f[2];
        r.center = {parse_number(f[3], where), parse_number(f[4], where), parse_number(f[5], where)};
        auto resolve = [&](const std::string& p) -> std::filesystem::path {
            if (p.empty()) {
                return {};
            }
            const std::filesystem::path fp(p);
            return fp.is_absolute() ? fp : base / fp;
        };
        r.mask_path = resolve(f[6]);
        r.volume_path = resolve(f[7]);
        records.push_back(std::move(r));
    }
    return records;
}

void write_labels_csv(const std::filesystem::path& path, const std::vector<NoduleRecord>& records) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write labels file " + path.string());
    }
    const auto base = std::filesystem::absolute(path).parent_path().lexically_normal();
    auto rel = [&](const std::filesystem::path& p) {
        if (p.empty()) {
            return std::string();
        }
        const auto abs = std::filesystem::absolute(p).lexically_normal();
        const auto r = abs.lexically_relative(base);
        if (!r.empty() && *r.begin() != "..") {
            return r.generic_string();
        }
        return abs.generic_string();
    };
    out << kLabelsHeader << '\n';
    char buf[96];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", r.center.x(), r.center.y(), r.center.z());
        out << r.id << ',' << r.rating << ',' << r.annotator << ',' << buf << ',' << rel(r.mask_path)
            << ',' << rel(r.volume_path) << '\n';
    }
}

std::vector<Group> group_nodules(std::span<const NoduleRecord> records, double threshold_mm) {
    if (!(threshold_mm > 0.0)) {
        throw ArgumentError("grouping threshold must be positive");
    }
    const int n = static_cast<int>(records.size());
    UnionFind uf(records.size());
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if ((records[i].center - records[j].center).norm() <= threshold_mm) {
                uf.unite(i, j);
            }
        }
    }
    std::map<int, Group> by_root;
    for (int i = 0; i < n; ++i) {
        by_root[uf.find(i)].push_back(i);
    }
    // Roots are the smallest member, so map order is smallest-index order.
    std::vector<Group> groups;
    groups.reserve(by_root.size());
    for (auto& [root, g] : by_root) {
        groups.push_back(std::move(g));
    }
    return groups;
}

std::vector<int> GroupedSplit::fold_records(int f) const {
    std::vector<int> out;
    for (int g : folds.at(f)) {
        out.insert(out.end(), groups[g].begin(), groups[g].end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

GroupedSplit kfold_split(std::vector<Group> groups, int k, std::uint64_t seed) {
    if (k < 2) {
        throw ArgumentError("k-fold split needs k >= 2");
    }
    if (static_cast<int>(groups.size()) < k) {
        throw ArgumentError("k-fold split: " + std::to_string(groups.size()) + " groups for " +
                            std::to_string(k) + " folds");
    }
    GroupedSplit s;
    s.groups = std::move(groups);
    std::vector<int> order(s.groups.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[uniform_index(rng, i)]);
    }
    s.folds.assign(k, {});
    for (std::size_t i = 0; i < order.size(); ++i) {
        s.folds[i % k].push_back(order[i]);
    }
    return s;
}

double off_by_one_accuracy(std::span<const int> pred, std::span<const int> truth) {
    check_pair(pred, truth);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += std::abs(pred[i] - truth[i]) <= 1 ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double exact_accuracy(std::span<const int> pred, std::span<const int> truth) {
    check_pair(pred, truth);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += pred[i] == truth[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) {
        throw ArgumentError("Welch's t needs at least two samples per group");
    }
    auto moments = [](std::span<const double> v, double& mean, double& var) {
        mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) {
            ss += (x - mean) * (x - mean);
        }
        var = ss / static_cast<double>(v.size() - 1);
    };
    double ma = 0.0, va = 0.0, mb = 0.0, vb = 0.0;
    moments(a, ma, va);
    moments(b, mb, vb);
    if (va == 0.0 && vb == 0.0) {
        throw UndefinedStatisticError("Welch's t is undefined when both samples have zero variance");
    }
    const double qa = va / static_cast<double>(a.size());
    const double qb = vb / static_cast<double>(b.size());
    WelchResult r;
    r.t = (ma - mb) / std::sqrt(qa + qb);
    r.df = (qa + qb) * (qa + qb) /
           (qa * qa / static_cast<double>(a.size() - 1) + qb * qb / static_cast<double>(b.size() - 1));
    return r;
}

std::vector<Group> filter_min_annotations(std::span<const NoduleRecord> records,
                                          const std::vector<Group>& groups, int min_annot) {
    std::vector<Group> out;
    for (const auto& g : groups) {
        std::set<std::string> annotators;
        for (int r : g) {
            annotators.insert(records[r].annotator);
        }
        if (static_cast<int>(annotators.size()) >= min_annot) {
            out.push_back(g);
        }
    }
    return out;
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::shape_only:
            return "shape_only";
        case Mode::appearance_only:
            return "appearance_only";
        case Mode::hybrid:
            return "hybrid";
    }
    return "?";
}

Report run_ablation(const AblationData& data, const AblationConfig& config) {
    if (config.modes.empty() || config.sh_counts.empty() || config.min_annotations.empty()) {
        throw ConfigError("ablation needs at least one mode, coefficient count and annotation filter");
    }
    const auto uses = [&](Mode m) {
        return std::find(config.modes.begin(), config.modes.end(), m) != config.modes.end();
    };
    const bool need_shape = uses(Mode::shape_only) || uses(Mode::hybrid);
    const bool need_app = uses(Mode::appearance_only) || uses(Mode::hybrid);
    if (need_shape && data.shape.empty()) {
        throw ConfigError("shape features requested but none are available");
    }
    if (need_app && data.appearance.empty()) {
        throw ConfigError("appearance features requested but none are available (no feature CSV and baseline disabled)");
    }
    if (need_shape) {
        const int per_channel = data.shape.begin()->second.per_channel_count();
        for (int n : config.sh_counts) {
            if (n < 1 || n > per_channel) {
                throw ConfigError("coefficient count " + std::to_string(n) + " exceeds the " +
                                  std::to_string(per_channel) + " fitted per channel");
            }
        }
    }

    const auto& records = data.records;
    const auto all_groups = group_nodules(records, config.group_threshold_mm);

    struct Job {
        Mode mode;
        int n_sh;
        int min_annot;
        int fold;
        const GroupedSplit* split;
    };
    std::vector<GroupedSplit> splits;
    splits.reserve(config.min_annotations.size());
    for (int m : config.min_annotations) {
        auto kept = filter_min_annotations(records, all_groups, m);
        if (static_cast<int>(kept.size()) < config.k_folds) {
            throw ConfigError("min_annot " + std::to_string(m) + " leaves " + std::to_string(kept.size()) +
                              " nodule groups, fewer than " + std::to_string(config.k_folds) + " folds");
        }
        splits.push_back(kfold_split(std::move(kept), config.k_folds, config.seed));
    }

    // appearance_only does not depend on n_sh: evaluated once, replicated per count.
    std::vector<Job> jobs;
    for (std::size_t mi = 0; mi < config.min_annotations.size(); ++mi) {
        for (Mode mode : config.modes) {
            const std::vector<int> counts =
                mode == Mode::appearance_only ? std::vector<int>{0} : config.sh_counts;
            for (int n : counts) {
                for (int f = 0; f < config.k_folds; ++f) {
                    jobs.push_back({mode, n, config.min_annotations[mi], f, &splits[mi]});
                }
            }
        }
    }

    auto features = [&](Mode mode, int n_sh, const NoduleRecord& r, std::vector<double>& out) {
        out.clear();
        if (mode != Mode::appearance_only) {
            const auto it = data.shape.find(r.id);
            if (it == data.shape.end()) {
                return false;
            }
            out = truncate(it->second, n_sh);
        }
        if (mode != Mode::shape_only) {
            const auto it = data.appearance.find(r.id);
            if (it == data.appearance.end()) {
                return false;
            }
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
        return true;
    };

    std::vector<FoldResult> results(jobs.size());
    std::vector<int> used(jobs.size(), 0);
    // Parallel over folds; each forest is trained single-threaded.
    parallel_for(jobs.size(), config.jobs, [&](std::size_t j) {
        const Job& job = jobs[j];
        std::vector<std::vector<double>> x_train;
        std::vector<int> y_train;
        std::vector<double> row;
        for (int f = 0; f < config.k_folds; ++f) {
            if (f == job.fold) {
                continue;
            }
            for (int r : job.split->fold_records(f)) {
                if (features(job.mode, job.n_sh, records[r], row)) {
                    x_train.push_back(row);
                    y_train.push_back(records[r].rating);
                }
            }
        }
        std::vector<int> pred, truth;
        if (x_train.size() >= 2) {
            const Forest forest = train(x_train, y_train, config.forest, 1);
            for (int r : job.split->fold_records(job.fold)) {
                if (features(job.mode, job.n_sh, records[r], row)) {
                    pred.push_back(predict(forest, row).rating);
                    truth.push_back(records[r].rating);
                }
            }
        }
        if (pred.empty()) {
            throw ConfigError(std::string("no usable records in fold ") + std::to_string(job.fold) +
                              " for mode " + mode_name(job.mode));
        }
        results[j] = {job.mode, job.n_sh, job.min_annot, job.fold, off_by_one_accuracy(pred, truth),
                      exact_accuracy(pred, truth)};
        used[j] = static_cast<int>(pred.size());
    });

    Report report;
    for (int m : config.min_annotations) {
        for (int n : config.sh_counts) {
            for (Mode mode : config.modes) {
                SummaryRow s{mode, n, m, 0, 0, 0, 0, 0};
                std::vector<double> obo, ex;
                for (std::size_t j = 0; j < jobs.size(); ++j) {
                    const Job& job = jobs[j];
                    if (job.mode != mode || job.min_annot != m ||
                        (mode != Mode::appearance_only && job.n_sh != n)) {
                        continue;
                    }
                    FoldResult fr = results[j];
                    fr.n_sh = n;
                    report.folds.push_back(fr);
                    obo.push_back(fr.off_by_one);
                    ex.push_back(fr.exact);
                    s.n_records += used[j];
                }
                s.off_by_one_mean = mean_of(obo);
                s.off_by_one_std = sample_std(obo);
                s.exact_mean = mean_of(ex);
                s.exact_std = sample_std(ex);
                report.summary.push_back(s);
            }
        }
    }
    return report;
}

void write_report_csv(std::ostream& out, const Report& r) {
    out << "mode,n_sh,min_annot,fold,off_by_one,exact\n";
    char buf[64];
    for (const auto& f : r.folds) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g", f.off_by_one, f.exact);
        out << mode_name(f.mode) << ',' << f.n_sh << ',' << f.min_annot << ',' << f.fold << ',' << buf << '\n';
    }
}

void write_summary_csv(std::ostream& out, const Report& r) {
    out << "mode,n_sh,min_annot,n_records,off_by_one_mean,off_by_one_std,exact_mean,exact_std\n";
    char buf[128];
    for (const auto& s : r.summary) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g", s.off_by_one_mean, s.off_by_one_std,
                      s.exact_mean, s.exact_std);
        out << mode_name(s.mode) << ',' << s.n_sh << ',' << s.min_annot << ',' << s.n_records << ','
            << buf << '\n';
    }
}

std::string format_report_table(const Report& r) {
    std::vector<Mode> modes;
    for (const auto& s : r.summary) {
        if (std::find(modes.begin(), modes.end(), s.mode) == modes.end()) {
            modes.push_back(s.mode);
        }
    }
    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-9s %-7s", "min_annot", "n_sh");
    out << buf;
    for (Mode m : modes) {
        std::snprintf(buf, sizeof buf, " %-22s", mode_name(m));
        out << buf;
    }
    out << '\n';
    for (std::size_t i = 0; i < r.summary.size(); i += modes.size()) {
        std::snprintf(buf, sizeof buf, "%-9d %-7d", r.summary[i].min_annot, r.summary[i].n_sh);
        out << buf;
        for (std::size_t k = 0; k < modes.size() && i + k < r.summary.size(); ++k) {
            const auto& s = r.summary[i + k];
            const std::string cell =
                format_fixed(s.off_by_one_mean, 3) + " +/- " + format_fixed(s.off_by_one_std, 3);
            std::snprintf(buf, sizeof buf, " %-22s", cell.c_str());
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace nodule
