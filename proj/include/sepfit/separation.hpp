#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepfit/dataset.hpp"
#include "sepfit/execution.hpp"
#include "sepfit/formula.hpp"

namespace sepfit {

/// Ordered by severity so `std::max` gives the worst finding.
enum class Classification { Overlap = 0, QuasiSeparation = 1, Separation = 2 };

const char* to_string(Classification c);

struct Cell {
    std::string label;
    std::size_t count = 0;
    std::size_t successes = 0;

    double proportion() const { return count ? static_cast<double>(successes) / static_cast<double>(count) : 0.0; }
    bool empty() const { return count == 0; }
    bool pure() const { return count > 0 && (successes == 0 || successes == count); }
};

/// Threshold split of a covariate: cells are (x <= threshold) and (x > threshold).
struct CovariateWitness {
    double threshold = 0.0;
    std::string pure_side;  // "below", "above" or "both"
    int pure_value = 0;
};

/// Classification of one scanned unit: a factor, a crossed factor term, a
/// covariate, or one group level of a random-effects grouping.
struct UnitFinding {
    std::string kind;    // "factor", "interaction", "covariate", "group"
    std::string source;  // predictor, term label, or grouping column
    std::string unit;    // level of the grouping column for kind == "group"
    std::vector<Cell> cells;
    Classification classification = Classification::Overlap;
    std::optional<CovariateWitness> witness;
};

struct SeparationReport {
    std::vector<UnitFinding> findings;

    Classification verdict() const;
    void append(const SeparationReport& other);

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

/// Overlap if no non-empty cell is pure, Separation if all are, otherwise
/// QuasiSeparation. Empty cells are ignored.
Classification classify_cells(const std::vector<Cell>& cells);

SeparationReport scan_factor(const Dataset& data, const std::string& factor);

/// Exhaustive threshold scan over the distinct values of the covariate.
SeparationReport scan_covariate(const Dataset& data, const std::string& covariate);

/// Crossed factor cells for a fixed interaction term made only of factors.
SeparationReport scan_interaction(const Dataset& data, const Term& term);

/// Per group level of each random block, crossed with the levels of every
/// factor among the block's slope variables.
SeparationReport scan_grouped(const Dataset& data, const ModelSpec& spec);

/// Every fixed variable, every factor-only fixed interaction, and every
/// random grouping. Units are scanned concurrently under Execution::Parallel
/// and merged in declaration order.
SeparationReport scan_dataset(const Dataset& data, const ModelSpec& spec, Execution exec = Execution::Parallel);

}  // namespace sepfit
