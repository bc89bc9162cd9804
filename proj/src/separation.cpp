#include "sepfit/separation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "sepfit/error.hpp"
#include "sepfit/textio.hpp"

namespace sepfit {

const char* to_string(Classification c) {
    switch (c) {
        case Classification::Overlap: return "Overlap";
        case Classification::QuasiSeparation: return "QuasiSeparation";
        case Classification::Separation: return "Separation";
    }
    return "?";
}

Classification classify_cells(const std::vector<Cell>& cells) {
    std::size_t used = 0, pure = 0;
    for (const auto& c : cells) {
        if (c.empty()) continue;
        ++used;
        if (c.pure()) ++pure;
    }
    if (used == 0 || pure == 0) return Classification::Overlap;
    return pure == used ? Classification::Separation : Classification::QuasiSeparation;
}

Classification SeparationReport::verdict() const {
    Classification worst = Classification::Overlap;
    for (const auto& f : findings) worst = std::max(worst, f.classification);
    return worst;
}

void SeparationReport::append(const SeparationReport& other) {
    findings.insert(findings.end(), other.findings.begin(), other.findings.end());
}

namespace {

const std::vector<int>& response_codes(const Dataset& data) { return data.response().codes; }

const DataColumn& factor_column(const Dataset& data, const std::string& name) {
    const auto& col = data.column(name);
    if (col.info.kind != ColumnKind::Factor && col.info.kind != ColumnKind::OrderedFactor)
        throw DataError("'" + name + "' is not a factor");
    return col;
}

/// Cells indexed by a mixed-radix code over several factors.
std::vector<Cell> crossed_cells(const Dataset& data, const std::vector<const DataColumn*>& factors,
                                const std::vector<std::size_t>& rows) {
    std::size_t total = 1;
    for (const auto* f : factors) total *= f->info.levels.size();
    std::vector<Cell> cells(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t rem = idx;
        std::string label;
        for (std::size_t k = factors.size(); k-- > 0;) {
            const auto& lv = factors[k]->info.levels;
            std::string part = factors[k]->info.name + "=" + lv[rem % lv.size()];
            label = label.empty() ? part : part + "," + label;
            rem /= lv.size();
        }
        cells[idx].label = label;
    }
    const auto& y = response_codes(data);
    for (std::size_t i : rows) {
        std::size_t idx = 0;
        for (const auto* f : factors) idx = idx * f->info.levels.size() + static_cast<std::size_t>(f->codes[i]);
        ++cells[idx].count;
        cells[idx].successes += static_cast<std::size_t>(y[i]);
    }
    return cells;
}

std::vector<std::size_t> all_rows(const Dataset& data) {
    std::vector<std::size_t> r(data.rows());
    std::iota(r.begin(), r.end(), 0);
    return r;
}

}  // namespace

SeparationReport scan_factor(const Dataset& data, const std::string& factor) {
    UnitFinding f;
    f.kind = "factor";
    f.source = factor;
    f.cells = crossed_cells(data, {&factor_column(data, factor)}, all_rows(data));
    for (auto& c : f.cells) c.label = c.label.substr(factor.size() + 1);
    f.classification = classify_cells(f.cells);
    return SeparationReport{{f}};
}

SeparationReport scan_interaction(const Dataset& data, const Term& term) {
    std::vector<const DataColumn*> cols;
    for (const auto& v : term.vars) cols.push_back(&factor_column(data, v));
    UnitFinding f;
    f.kind = "interaction";
    f.source = term.label();
    f.cells = crossed_cells(data, cols, all_rows(data));
    f.classification = classify_cells(f.cells);
    return SeparationReport{{f}};
}

SeparationReport scan_covariate(const Dataset& data, const std::string& covariate) {
    const auto& col = data.column(covariate);
    if (col.info.kind != ColumnKind::Covariate) throw DataError("'" + covariate + "' is not a covariate");
    const auto& x = col.values;
    const auto& y = response_codes(data);
    const std::size_t n = data.rows();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::size_t total_ones = 0;
    for (int v : y) total_ones += static_cast<std::size_t>(v);

    UnitFinding f;
    f.kind = "covariate";
    f.source = covariate;

    struct Split {
        double threshold;
        std::size_t left_n, left_ones;
    };
    std::vector<Split> splits;
    std::size_t ln = 0, lo = 0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        ++ln;
        lo += static_cast<std::size_t>(y[order[k]]);
        if (x[order[k + 1]] != x[order[k]]) splits.push_back({x[order[k]], ln, lo});
    }
    if (splits.empty()) {
        f.classification = Classification::Overlap;
        return SeparationReport{{f}};
    }

    auto make_cells = [&](const Split& s) {
        const std::string t = format_double(s.threshold);
        return std::vector<Cell>{{"<= " + t, s.left_n, s.left_ones},
                                 {"> " + t, n - s.left_n, total_ones - s.left_ones}};
    };

    const Split* best = nullptr;
    std::size_t best_pure_size = 0;
    bool best_both = false;
    for (const auto& s : splits) {
        const std::size_t rn = n - s.left_n, ro = total_ones - s.left_ones;
        const bool lp = s.left_ones == 0 || s.left_ones == s.left_n;
        const bool rp = ro == 0 || ro == rn;
        if (lp && rp) {
            if (!best_both) {
                best = &s;
                best_both = true;
            }
            continue;
        }
        if (best_both || !(lp || rp)) continue;
        const std::size_t size = lp ? s.left_n : rn;
        if (size > best_pure_size) {
            best_pure_size = size;
            best = &s;
        }
    }

    if (!best) {
        f.cells = make_cells(splits[splits.size() / 2]);
        f.classification = Classification::Overlap;
        return SeparationReport{{f}};
    }
    f.cells = make_cells(*best);
    f.classification = classify_cells(f.cells);
    CovariateWitness w;
    w.threshold = best->threshold;
    const bool lp = f.cells[0].pure(), rp = f.cells[1].pure();
    w.pure_side = lp && rp ? "both" : (lp ? "below" : "above");
    const Cell& pc = lp ? f.cells[0] : f.cells[1];
    w.pure_value = pc.successes == pc.count ? 1 : 0;
    f.witness = w;
    return SeparationReport{{f}};
}

SeparationReport scan_grouped(const Dataset& data, const ModelSpec& spec) {
    SeparationReport report;
    for (const auto& block : spec.random_blocks) {
        const auto& gcol = factor_column(data, block.group);
        std::vector<const DataColumn*> factors;
        for (const auto& t : block.slopes)
            for (const auto& v : t.vars) {
                const auto& c = data.column(v);
                if (c.info.kind == ColumnKind::Covariate) continue;
                if (std::find(factors.begin(), factors.end(), &c) == factors.end()) factors.push_back(&c);
            }
        std::vector<std::vector<std::size_t>> rows(gcol.info.levels.size());
        for (std::size_t i = 0; i < data.rows(); ++i) rows[gcol.codes[i]].push_back(i);
        for (std::size_t g = 0; g < rows.size(); ++g) {
            if (rows[g].empty()) continue;
            UnitFinding f;
            f.kind = "group";
            f.source = block.group;
            f.unit = gcol.info.levels[g];
            if (factors.empty()) {
                Cell c{"all", 0, 0};
                for (std::size_t i : rows[g]) {
                    ++c.count;
                    c.successes += static_cast<std::size_t>(response_codes(data)[i]);
                }
                f.cells = {c};
            } else {
                f.cells = crossed_cells(data, factors, rows[g]);
            }
            f.classification = classify_cells(f.cells);
            report.findings.push_back(std::move(f));
        }
    }
    return report;
}

SeparationReport scan_dataset(const Dataset& data, const ModelSpec& spec, Execution exec) {
    struct Job {
        enum { Variable, Interaction, Grouped } kind;
        std::string name;
        Term term;
    };
    std::vector<Job> jobs;
    for (const auto& v : spec.fixed_variables()) jobs.push_back({Job::Variable, v, {}});
    for (const auto& t : spec.fixed_terms) {
        if (t.order() < 2 || t.has_repeat()) continue;
        bool factors_only = std::all_of(t.vars.begin(), t.vars.end(), [&](const std::string& v) {
            return data.column(v).info.kind != ColumnKind::Covariate;
        });
        if (factors_only) jobs.push_back({Job::Interaction, t.label(), t});
    }
    for (const auto& b : spec.random_blocks) jobs.push_back({Job::Grouped, b.group, {}});

    std::vector<SeparationReport> parts(jobs.size());
    auto run = [&](std::size_t k) {
        const Job& job = jobs[k];
        switch (job.kind) {
            case Job::Variable:
                parts[k] = data.column(job.name).info.kind == ColumnKind::Covariate ? scan_covariate(data, job.name)
                                                                                      : scan_factor(data, job.name);
                break;
            case Job::Interaction: parts[k] = scan_interaction(data, job.term); break;
            case Job::Grouped: {
                ModelSpec single = spec;
                single.random_blocks.clear();
                for (const auto& b : spec.random_blocks)
                    if (b.group == job.name) {
                        single.random_blocks = {b};
                        break;
                    }
                parts[k] = scan_grouped(data, single);
                break;
            }
        }
    };

    const long count = static_cast<long>(jobs.size());
    if (exec == Execution::Parallel) {
        // Exceptions cannot cross the OpenMP region boundary; capture the first.
        std::vector<std::exception_ptr> errors(jobs.size());
#pragma omp parallel for schedule(dynamic)
        for (long k = 0; k < count; ++k) {
            try {
                run(static_cast<std::size_t>(k));
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (long k = 0; k < count; ++k) run(static_cast<std::size_t>(k));
    }

    SeparationReport out;
    for (const auto& p : parts) out.append(p);
    return out;
}

nlohmann::ordered_json SeparationReport::to_json() const {
    nlohmann::ordered_json j;
    j["verdict"] = to_string(verdict());
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& f : findings) {
        nlohmann::ordered_json e;
        e["kind"] = f.kind;
        e["source"] = f.source;
        if (!f.unit.empty()) e["unit"] = f.unit;
        e["classification"] = to_string(f.classification);
        nlohmann::ordered_json cells = nlohmann::ordered_json::array();
        for (const auto& c : f.cells) {
            nlohmann::ordered_json ce;
            ce["cell"] = c.label;
            ce["count"] = c.count;
            ce["successes"] = c.successes;
            if (c.count)
                ce["proportion"] = c.proportion();
            else
                ce["proportion"] = nullptr;
            ce["pure"] = c.pure();
            cells.push_back(ce);
        }
        e["cells"] = cells;
        if (f.witness) {
            e["threshold"] = f.witness->threshold;
            e["pure_side"] = f.witness->pure_side;
            e["pure_value"] = f.witness->pure_value;
        }
        arr.push_back(e);
    }
    j["findings"] = arr;
    return j;
}

std::string SeparationReport::to_text() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-12s %-24s %-12s %-16s %s\n", "kind", "source", "unit", "class", "cells (n, p)");
    os << buf;
    for (const auto& f : findings) {
        std::string cells;
        for (const auto& c : f.cells) {
            char cb[128];
            if (c.count)
                std::snprintf(cb, sizeof cb, "[%s: %zu, %.3f]", c.label.c_str(), c.count, c.proportion());
            else
                std::snprintf(cb, sizeof cb, "[%s: empty]", c.label.c_str());
            if (!cells.empty()) cells += ' ';
            cells += cb;
        }
        std::snprintf(buf, sizeof buf, "%-12s %-24s %-12s %-16s ", f.kind.c_str(), f.source.c_str(),
                      f.unit.empty() ? "-" : f.unit.c_str(), to_string(f.classification));
        os << buf << cells << "\n";
    }
    os << "verdict: " << to_string(verdict()) << "\n";
    return os.str();
}

}  // namespace sepfit
