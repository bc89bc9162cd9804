#include "sepfit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "sepfit/error.hpp"
#include "sepfit/textio.hpp"

namespace sepfit {

Dataset::Dataset(std::vector<DataColumn> columns, std::size_t rows) : columns_(std::move(columns)), rows_(rows) {
    for (const auto& c : columns_) {
        std::size_t len = c.info.kind == ColumnKind::Covariate ? c.values.size() : c.codes.size();
        if (len != rows_) throw DataError("column '" + c.info.name + "' has " + std::to_string(len) + " rows, expected " +
                                          std::to_string(rows_));
        if (c.info.kind != ColumnKind::Covariate) {
            for (int code : c.codes)
                if (code < 0 || code >= static_cast<int>(c.info.levels.size()))
                    throw DataError("column '" + c.info.name + "': level code out of range");
        }
    }
}

const DataColumn* Dataset::find(const std::string& name) const {
    for (const auto& c : columns_)
        if (c.info.name == name) return &c;
    return nullptr;
}

const DataColumn& Dataset::column(const std::string& name) const {
    if (const auto* c = find(name)) return *c;
    throw DataError("dataset has no column '" + name + "'");
}

const DataColumn& Dataset::response() const {
    for (const auto& c : columns_)
        if (c.info.kind == ColumnKind::Response) return c;
    throw DataError("dataset has no response column");
}

ColumnSchema Dataset::schema() const {
    std::vector<ColumnInfo> infos;
    for (const auto& c : columns_) infos.push_back(c.info);
    return ColumnSchema(std::move(infos));
}

Dataset Dataset::permuted(const std::vector<std::size_t>& order) const {
    if (order.size() != rows_) throw DataError("permutation length does not match row count");
    std::vector<DataColumn> cols = columns_;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        const auto& src = columns_[k];
        auto& dst = cols[k];
        for (std::size_t i = 0; i < rows_; ++i) {
            if (src.info.kind == ColumnKind::Covariate)
                dst.values[i] = src.values[order[i]];
            else
                dst.codes[i] = src.codes[order[i]];
        }
    }
    Dataset out(std::move(cols), rows_);
    out.dropped_by_column = dropped_by_column;
    out.dropped_rows = dropped_rows;
    return out;
}

namespace {

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA"; }

bool parse_number(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (b != e && *b == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && ptr == e;
}

int response_code(const ColumnInfo& info, const std::string& cell) {
    for (std::size_t l = 0; l < info.levels.size(); ++l)
        if (info.levels[l] == cell) return static_cast<int>(l);
    double v;
    if (parse_number(cell, v)) {
        for (std::size_t l = 0; l < info.levels.size(); ++l) {
            double lv;
            if (parse_number(info.levels[l], lv) && lv == v) return static_cast<int>(l);
        }
    }
    return -1;
}

}  // namespace

Dataset parse_csv(const std::string& text, const ColumnSchema& schema) {
    auto rows = parse_csv_rows(text);
    if (rows.empty()) throw DataError("CSV has no header row");
    const auto& header = rows.front();

    std::vector<std::size_t> source(schema.columns().size());
    for (std::size_t k = 0; k < schema.columns().size(); ++k) {
        const auto& name = schema.columns()[k].name;
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError("CSV is missing column '" + name + "'");
        source[k] = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<DataColumn> cols;
    for (const auto& info : schema.columns()) cols.push_back(DataColumn{info, {}, {}});
    std::vector<std::size_t> missing(cols.size(), 0);
    std::size_t dropped = 0;
    std::size_t kept = 0;

    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && row[0].empty()) continue;  // blank line
        const std::size_t line = r + 1;
        if (row.size() != header.size())
            throw DataError("line " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(row.size()));
        bool any_missing = false;
        for (std::size_t k = 0; k < cols.size(); ++k)
            if (is_missing(row[source[k]])) {
                ++missing[k];
                any_missing = true;
            }
        if (any_missing) {
            ++dropped;
            continue;
        }
        for (std::size_t k = 0; k < cols.size(); ++k) {
            auto& col = cols[k];
            const std::string& cell = row[source[k]];
            const std::string where = "line " + std::to_string(line) + ", column '" + col.info.name + "'";
            switch (col.info.kind) {
                case ColumnKind::Covariate: {
                    double v;
                    if (!parse_number(cell, v)) throw DataError(where + ": cannot parse '" + cell + "' as a number");
                    col.values.push_back(v);
                    break;
                }
                case ColumnKind::Response: {
                    int code = response_code(col.info, cell);
                    if (code < 0) throw DataError(where + ": response value '" + cell + "' is not binary");
                    col.codes.push_back(code);
                    break;
                }
                case ColumnKind::Factor:
                case ColumnKind::OrderedFactor: {
                    auto& lv = col.info.levels;
                    auto it = std::find(lv.begin(), lv.end(), cell);
                    if (it == lv.end()) {
                        if (!schema.at(col.info.name).levels.empty())
                            throw DataError(where + ": level '" + cell + "' not in declared level list");
                        lv.push_back(cell);
                        it = lv.end() - 1;
                    }
                    col.codes.push_back(static_cast<int>(it - lv.begin()));
                    break;
                }
            }
        }
        ++kept;
    }
    if (kept == 0) throw DataError("no usable rows after removing missing values");
    for (auto& c : cols)
        if (c.info.kind == ColumnKind::Factor && c.info.levels.empty())
            throw DataError("factor '" + c.info.name + "' has no levels");

    Dataset out(std::move(cols), kept);
    for (std::size_t k = 0; k < schema.columns().size(); ++k)
        out.dropped_by_column.emplace_back(schema.columns()[k].name, missing[k]);
    out.dropped_rows = dropped;
    return out;
}

Dataset load_csv(const std::filesystem::path& path, const ColumnSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open data file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str(), schema);
}

std::string to_csv(const Dataset& data) {
    std::string out;
    const auto& cols = data.columns();
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (k) out += ',';
        out += csv_escape(cols[k].info.name);
    }
    out += '\n';
    for (std::size_t i = 0; i < data.rows(); ++i) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            if (k) out += ',';
            const auto& c = cols[k];
            if (c.info.kind == ColumnKind::Covariate)
                out += format_double(c.values[i]);
            else
                out += csv_escape(c.info.levels[c.codes[i]]);
        }
        out += '\n';
    }
    return out;
}

}  // namespace sepfit
