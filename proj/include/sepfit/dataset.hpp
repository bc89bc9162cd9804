#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "sepfit/schema.hpp"

namespace sepfit {

/// One typed column. Covariates fill `values`; factors and the response fill
/// `codes` with 0-based indices into `info.levels` (response: 0 = first level).
struct DataColumn {
    ColumnInfo info;
    std::vector<double> values;
    std::vector<int> codes;
};

/// Typed, complete-case table. Immutable once loaded.
class Dataset {
public:
    Dataset() = default;
    /// Columns must all have `rows` entries; factor levels must be resolved.
    Dataset(std::vector<DataColumn> columns, std::size_t rows);

    std::size_t rows() const { return rows_; }
    const std::vector<DataColumn>& columns() const { return columns_; }
    const DataColumn& column(const std::string& name) const;
    const DataColumn* find(const std::string& name) const;
    const DataColumn& response() const;
    /// Schema with every factor's level list filled in.
    ColumnSchema schema() const;

    /// Rows reordered so that row i of the result is row `order[i]` of this.
    Dataset permuted(const std::vector<std::size_t>& order) const;

    /// Per-column counts of rows removed for missing values during loading.
    std::vector<std::pair<std::string, std::size_t>> dropped_by_column;
    std::size_t dropped_rows = 0;

private:
    std::vector<DataColumn> columns_;
    std::size_t rows_ = 0;
};

/// Comma-delimited, header row, "NA" or empty cell = missing. Rows missing any
/// schema column are dropped (listwise deletion) and counted.
Dataset load_csv(const std::filesystem::path& path, const ColumnSchema& schema);
Dataset parse_csv(const std::string& text, const ColumnSchema& schema);

/// Writes the dataset back out in schema column order.
std::string to_csv(const Dataset& data);

}  // namespace sepfit
