#include "sepfit/tree.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "sepfit/error.hpp"
#include "sepfit/textio.hpp"

namespace sepfit {

namespace {

double gini(std::size_t n, std::size_t ones) {
    if (n == 0) return 0.0;
    const double p = static_cast<double>(ones) / static_cast<double>(n);
    return 2.0 * p * (1.0 - p);
}

struct Feature {
    std::string name;
    bool categorical = false;
    const std::vector<double>* values = nullptr;
    const std::vector<int>* codes = nullptr;
    const std::vector<std::string>* levels = nullptr;
};

struct Candidate {
    double impurity;
    TreeSplit split;
};

constexpr double kTieEps = 1e-12;

class Builder {
public:
    Builder(const std::vector<Feature>& features, const std::vector<int>& y, const TreeOptions& opt)
        : features_(features), y_(y), opt_(opt) {}

    std::vector<TreeNode> nodes;
    std::vector<int> row_leaf;

    void build(std::vector<std::size_t> rows) {
        row_leaf.assign(y_.size(), 0);
        grow(std::move(rows), 0);
    }

private:
    int grow(std::vector<std::size_t> rows, int depth) {
        TreeNode node;
        node.count = rows.size();
        for (std::size_t i : rows) node.successes += static_cast<std::size_t>(y_[i]);
        node.impurity = gini(node.count, node.successes);
        node.depth = depth;
        const int id = static_cast<int>(nodes.size());
        nodes.push_back(node);

        const bool pure = node.successes == 0 || node.successes == node.count;
        std::optional<Candidate> best;
        if (!pure && depth < opt_.max_depth && node.count >= 2 * static_cast<std::size_t>(opt_.min_leaf))
            best = best_split(rows, node.impurity);
        if (!best) {
            nodes[id].witness = pure && node.count >= static_cast<std::size_t>(opt_.min_leaf);
            for (std::size_t i : rows) row_leaf[i] = id;
            return id;
        }
        std::vector<std::size_t> left, right;
        for (std::size_t i : rows) (goes_left(best->split, i) ? left : right).push_back(i);
        nodes[id].split = best->split;
        const int l = grow(std::move(left), depth + 1);
        const int r = grow(std::move(right), depth + 1);
        nodes[id].left = l;
        nodes[id].right = r;
        return id;
    }

    bool goes_left(const TreeSplit& s, std::size_t i) const {
        const Feature& f = features_[s.feature];
        if (!f.categorical) return (*f.values)[i] <= s.threshold;
        const std::string& lv = (*f.levels)[(*f.codes)[i]];
        return std::find(s.left_levels.begin(), s.left_levels.end(), lv) != s.left_levels.end();
    }

    std::optional<Candidate> best_split(const std::vector<std::size_t>& rows, double parent) const {
        std::optional<Candidate> best;
        const std::size_t n = rows.size();
        std::size_t total_ones = 0;
        for (std::size_t i : rows) total_ones += static_cast<std::size_t>(y_[i]);
        const auto min_leaf = static_cast<std::size_t>(opt_.min_leaf);
        auto weighted = [&](std::size_t ln, std::size_t lo) {
            return (static_cast<double>(ln) * gini(ln, lo) + static_cast<double>(n - ln) * gini(n - ln, total_ones - lo)) /
                   static_cast<double>(n);
        };
        auto consider = [&](double imp, TreeSplit split) {
            if (!(imp < parent - kTieEps)) return;
            if (!best || imp < best->impurity - kTieEps) best = Candidate{imp, std::move(split)};
        };

        for (std::size_t fi = 0; fi < features_.size(); ++fi) {
            const Feature& f = features_[fi];
            if (!f.categorical) {
                std::vector<std::size_t> order = rows;
                const auto& x = *f.values;
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
                std::size_t ln = 0, lo = 0;
                for (std::size_t k = 0; k + 1 < n; ++k) {
                    ++ln;
                    lo += static_cast<std::size_t>(y_[order[k]]);
                    if (x[order[k + 1]] == x[order[k]] || ln < min_leaf || n - ln < min_leaf) continue;
                    TreeSplit s;
                    s.feature = fi;
                    s.feature_name = f.name;
                    s.threshold = 0.5 * (x[order[k]] + x[order[k + 1]]);
                    consider(weighted(ln, lo), std::move(s));
                }
            } else {
                const auto& codes = *f.codes;
                const std::size_t levels = f.levels->size();
                std::vector<std::size_t> cnt(levels, 0), ones(levels, 0);
                for (std::size_t i : rows) {
                    ++cnt[codes[i]];
                    ones[codes[i]] += static_cast<std::size_t>(y_[i]);
                }
                std::vector<std::size_t> present;
                for (std::size_t l = 0; l < levels; ++l)
                    if (cnt[l]) present.push_back(l);
                // Breiman: for a binary response the best subset split is a prefix
                // of the levels ordered by success proportion.
                std::stable_sort(present.begin(), present.end(), [&](std::size_t a, std::size_t b) {
                    return static_cast<double>(ones[a]) * static_cast<double>(cnt[b]) <
                           static_cast<double>(ones[b]) * static_cast<double>(cnt[a]);
                });
                std::size_t ln = 0, lo = 0;
                for (std::size_t k = 0; k + 1 < present.size(); ++k) {
                    ln += cnt[present[k]];
                    lo += ones[present[k]];
                    if (ln < min_leaf || n - ln < min_leaf) continue;
                    TreeSplit s;
                    s.feature = fi;
                    s.feature_name = f.name;
                    s.categorical = true;
                    for (std::size_t j = 0; j <= k; ++j) s.left_levels.push_back((*f.levels)[present[j]]);
                    consider(weighted(ln, lo), std::move(s));
                }
            }
        }
        return best;
    }

    const std::vector<Feature>& features_;
    const std::vector<int>& y_;
    TreeOptions opt_;
};

std::string describe(const TreeSplit& s, bool left) {
    if (!s.categorical) return s.feature_name + (left ? " <= " : " > ") + format_double(s.threshold);
    std::string lv;
    for (const auto& l : s.left_levels) lv += (lv.empty() ? "" : ",") + l;
    return s.feature_name + (left ? " in {" : " not in {") + lv + "}";
}

}  // namespace

ClassificationTree fit_tree(const Dataset& data, const ModelSpec& spec, const TreeOptions& options) {
    if (options.max_depth < 1 || options.min_leaf < 1) throw ConfigError("tree needs max_depth >= 1 and min_leaf >= 1");
    std::vector<std::string> names = spec.fixed_variables();
    for (const auto& b : spec.random_blocks)
        if (std::find(names.begin(), names.end(), b.group) == names.end()) names.push_back(b.group);

    std::vector<Feature> features;
    for (const auto& name : names) {
        const auto& col = data.column(name);
        Feature f;
        f.name = name;
        f.categorical = col.info.kind != ColumnKind::Covariate;
        if (f.categorical) {
            f.codes = &col.codes;
            f.levels = &col.info.levels;
        } else {
            f.values = &col.values;
        }
        features.push_back(f);
    }

    Builder b(features, data.response().codes, options);
    std::vector<std::size_t> rows(data.rows());
    std::iota(rows.begin(), rows.end(), 0);
    b.build(std::move(rows));

    ClassificationTree t;
    t.nodes_ = std::move(b.nodes);
    t.row_leaf_ = std::move(b.row_leaf);
    t.feature_names_ = std::move(names);
    return t;
}

std::vector<int> ClassificationTree::leaves() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < nodes_.size(); ++k)
        if (nodes_[k].leaf()) out.push_back(static_cast<int>(k));
    return out;
}

std::vector<int> ClassificationTree::witnesses() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < nodes_.size(); ++k)
        if (nodes_[k].witness) out.push_back(static_cast<int>(k));
    return out;
}

nlohmann::ordered_json ClassificationTree::to_json() const {
    auto node_json = [&](auto&& self, int id) -> nlohmann::ordered_json {
        const TreeNode& n = nodes_[id];
        nlohmann::ordered_json j;
        j["count"] = n.count;
        j["successes"] = n.successes;
        j["proportion"] = n.proportion();
        j["gini"] = n.impurity;
        if (n.leaf()) {
            j["leaf"] = true;
            j["witness"] = n.witness;
            return j;
        }
        nlohmann::ordered_json s;
        s["feature"] = n.split->feature_name;
        if (n.split->categorical)
            s["left_levels"] = n.split->left_levels;
        else
            s["threshold"] = n.split->threshold;
        j["split"] = s;
        j["left"] = self(self, n.left);
        j["right"] = self(self, n.right);
        return j;
    };
    nlohmann::ordered_json j;
    j["features"] = feature_names_;
    j["root"] = node_json(node_json, 0);
    return j;
}

std::string ClassificationTree::to_text() const {
    std::ostringstream os;
    auto line = [&](const TreeNode& n) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "n=%zu p=%.3f%s", n.count, n.proportion(),
                      n.witness ? "  <-- pure leaf (quasi-separation witness)" : "");
        return std::string(buf);
    };
    auto walk = [&](auto&& self, int id, int indent) -> void {
        const TreeNode& n = nodes_[id];
        if (n.leaf()) return;
        for (int side = 0; side < 2; ++side) {
            const int child = side == 0 ? n.left : n.right;
            os << std::string(static_cast<std::size_t>(indent) * 2, ' ') << describe(*n.split, side == 0) << ": "
               << line(nodes_[child]) << "\n";
            self(self, child, indent + 1);
        }
    };
    os << "root: " << line(nodes_.front()) << "\n";
    walk(walk, 0, 1);
    return os.str();
}

}  // namespace sepfit
