#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sepfit {

enum class ColumnKind { Covariate, Factor, OrderedFactor, Response };

const char* to_string(ColumnKind kind);

struct ColumnInfo {
    std::string name;
    ColumnKind kind = ColumnKind::Covariate;
    /// Factor levels (order matters for ordered factors and for contrast signs).
    /// May be empty for unordered factors in a schema file, in which case the
    /// levels are taken from the data in order of first appearance.
    std::vector<std::string> levels;
};

/// Column declarations for one run. Exactly one column is the response.
class ColumnSchema {
public:
    ColumnSchema() = default;
    explicit ColumnSchema(std::vector<ColumnInfo> columns);

    const std::vector<ColumnInfo>& columns() const { return columns_; }
    const ColumnInfo* find(const std::string& name) const;
    const ColumnInfo& at(const std::string& name) const;
    const ColumnInfo& response() const;

    /// Parses `{"col": {"kind": "covariate|factor|ordered|response", "levels": [...]}}`.
    static ColumnSchema from_json_text(const std::string& text);
    static ColumnSchema load(const std::filesystem::path& path);
    std::string to_json_text() const;

private:
    std::vector<ColumnInfo> columns_;
};

}  // namespace sepfit
