#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepfit/dataset.hpp"
#include "sepfit/formula.hpp"

namespace sepfit {

struct TreeOptions {
    int max_depth = 6;
    int min_leaf = 20;
};

struct TreeSplit {
    std::size_t feature = 0;
    std::string feature_name;
    bool categorical = false;
    double threshold = 0.0;                // numeric: left is x <= threshold
    std::vector<std::string> left_levels;  // categorical: left is membership
};

struct TreeNode {
    std::size_t count = 0;
    std::size_t successes = 0;
    double impurity = 0.0;  // Gini
    int depth = 0;
    std::optional<TreeSplit> split;
    int left = -1;
    int right = -1;
    bool witness = false;  // pure leaf with count >= min_leaf

    bool leaf() const { return !split.has_value(); }
    double proportion() const { return count ? static_cast<double>(successes) / static_cast<double>(count) : 0.0; }
};

/// Binary CART on the response with Gini impurity. Numeric features split at
/// midpoints between consecutive distinct values; categorical features use
/// the levels-sorted-by-proportion ordering. Ties go to the leftmost feature,
/// then the smallest threshold. Children must each hold >= min_leaf rows.
class ClassificationTree {
public:
    const std::vector<TreeNode>& nodes() const { return nodes_; }
    const TreeNode& root() const { return nodes_.front(); }
    const std::vector<std::string>& features() const { return feature_names_; }

    /// Leaf node index for every training row.
    const std::vector<int>& row_leaf() const { return row_leaf_; }
    std::vector<int> leaves() const;
    std::vector<int> witnesses() const;

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;

    friend ClassificationTree fit_tree(const Dataset&, const ModelSpec&, const TreeOptions&);

private:
    std::vector<TreeNode> nodes_;
    std::vector<std::string> feature_names_;
    std::vector<int> row_leaf_;
};

/// Features: every fixed-effect variable in first-use order, then each random
/// block's grouping column.
ClassificationTree fit_tree(const Dataset& data, const ModelSpec& spec, const TreeOptions& options = {});

}  // namespace sepfit
