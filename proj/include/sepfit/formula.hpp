#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sepfit/schema.hpp"

namespace sepfit {

/// One model term: the variables multiplied together. Stored sorted; a
/// single variable is a main effect, more than one is an interaction.
struct Term {
    std::vector<std::string> vars;

    std::size_t order() const { return vars.size(); }
    std::string label() const;  // "a:b"
    bool has_repeat() const;

    friend bool operator==(const Term&, const Term&) = default;
};

struct RandomBlock {
    std::string group;
    bool has_intercept = true;
    std::vector<Term> slopes;

    /// Number of random coefficients per group level.
    std::size_t width() const { return slopes.size() + (has_intercept ? 1 : 0); }

    friend bool operator==(const RandomBlock&, const RandomBlock&) = default;
};

/// Parsed mixed-model formula. The fixed intercept is always present.
struct ModelSpec {
    std::string response;
    std::vector<Term> fixed_terms;
    std::vector<RandomBlock> random_blocks;
    bool intercept = true;

    /// Distinct variables of the fixed part in first-use order.
    std::vector<std::string> fixed_variables() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Grammar:
///   formula   := ident "~" rhs
///   rhs       := item ("+" item)*
///   item      := "1" | term_expr | "(" block ")"
///   block     := ["0" "+" | "1" "+"] term_expr ("+" term_expr)* "|" ident  |  ("1"|"0") "|" ident
///   term_expr := factor (("*" | ":") factor)*     (":" binds tighter than "*")
/// `a*b` expands to a, b, a:b; an n-way `*` chain yields all 2^n - 1 subsets,
/// ordered by interaction order, mains first.
ModelSpec parse_formula(std::string_view text);

/// Canonical text form; `parse_formula(to_string(s)) == s`.
std::string to_string(const ModelSpec& spec);

/// Checks every referenced column against the schema.
void validate_spec(const ModelSpec& spec, const ColumnSchema& schema);

}  // namespace sepfit
