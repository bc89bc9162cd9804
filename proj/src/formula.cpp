#include "sepfit/formula.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <map>
#include <optional>
#include <set>

#include "sepfit/error.hpp"

namespace sepfit {

std::string Term::label() const {
    std::string out;
    for (std::size_t i = 0; i < vars.size(); ++i) {
        if (i) out += ':';
        out += vars[i];
    }
    return out;
}

bool Term::has_repeat() const {
    std::set<std::string> seen(vars.begin(), vars.end());
    return seen.size() != vars.size();
}

std::vector<std::string> ModelSpec::fixed_variables() const {
    std::vector<std::string> out;
    for (const auto& t : fixed_terms)
        for (const auto& v : t.vars)
            if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    return out;
}

namespace {

enum class Tok { Ident, Zero, One, Tilde, Plus, Star, Colon, LParen, RParen, Bar, End };

struct Token {
    Tok kind;
    std::string text;
    std::size_t offset;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (ident_start(c)) {
            std::size_t j = i + 1;
            while (j < s.size() && ident_char(s[j])) ++j;
            out.push_back({Tok::Ident, std::string(s.substr(i, j - i)), i});
            i = j;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t j = i + 1;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            auto num = s.substr(i, j - i);
            if (num == "0")
                out.push_back({Tok::Zero, "0", i});
            else if (num == "1")
                out.push_back({Tok::One, "1", i});
            else
                throw FormulaError("unexpected number '" + std::string(num) + "'", i);
            i = j;
            continue;
        }
        Tok k;
        switch (c) {
            case '~': k = Tok::Tilde; break;
            case '+': k = Tok::Plus; break;
            case '*': k = Tok::Star; break;
            case ':': k = Tok::Colon; break;
            case '(': k = Tok::LParen; break;
            case ')': k = Tok::RParen; break;
            case '|': k = Tok::Bar; break;
            default: throw FormulaError(std::string("unexpected character '") + c + "'", i);
        }
        out.push_back({k, std::string(1, c), i});
        ++i;
    }
    out.push_back({Tok::End, "", s.size()});
    return out;
}

std::vector<std::string> canonical(const Term& t) {
    auto v = t.vars;
    std::sort(v.begin(), v.end());
    return v;
}

struct PositionedTerm {
    Term term;
    std::size_t offset;
};

class Parser {
public:
    explicit Parser(std::string_view text) : toks_(tokenize(text)) {}

    ModelSpec parse() {
        ModelSpec spec;
        const Token& resp = expect(Tok::Ident, "response name");
        spec.response = resp.text;
        expect(Tok::Tilde, "'~'");

        std::vector<PositionedTerm> fixed;
        parse_item(spec, fixed);
        while (peek().kind == Tok::Plus) {
            advance();
            parse_item(spec, fixed);
        }
        if (peek().kind != Tok::End) throw FormulaError("unexpected '" + peek().text + "'", peek().offset);

        add_unique(fixed, spec.fixed_terms, "fixed");
        for (const auto& t : spec.fixed_terms)
            for (const auto& v : t.vars)
                if (v == spec.response)
                    throw FormulaError("response '" + v + "' appears on the right-hand side", resp.offset);
        for (const auto& b : spec.random_blocks) {
            if (b.group == spec.response)
                throw FormulaError("response '" + b.group + "' used as grouping factor", resp.offset);
            for (const auto& t : b.slopes)
                for (const auto& v : t.vars)
                    if (v == spec.response)
                        throw FormulaError("response '" + v + "' appears on the right-hand side", resp.offset);
        }
        return spec;
    }

private:
    const Token& peek() const { return toks_[pos_]; }
    const Token& advance() { return toks_[pos_++]; }
    const Token& expect(Tok k, const char* what) {
        if (peek().kind != k)
            throw FormulaError(std::string("expected ") + what + ", found '" +
                                   (peek().kind == Tok::End ? std::string("end of input") : peek().text) + "'",
                               peek().offset);
        return advance();
    }

    void parse_item(ModelSpec& spec, std::vector<PositionedTerm>& fixed) {
        const Token& t = peek();
        switch (t.kind) {
            case Tok::One: advance(); return;
            case Tok::Zero: throw FormulaError("the fixed intercept cannot be removed", t.offset);
            case Tok::LParen: spec.random_blocks.push_back(parse_block()); return;
            case Tok::Ident: {
                auto terms = parse_term_expr();
                fixed.insert(fixed.end(), terms.begin(), terms.end());
                return;
            }
            default:
                throw FormulaError("expected a term, found '" + (t.kind == Tok::End ? std::string("end of input") : t.text) +
                                       "'",
                                   t.offset);
        }
    }

    RandomBlock parse_block() {
        const Token& open = expect(Tok::LParen, "'('");
        RandomBlock block;
        std::vector<PositionedTerm> slopes;
        bool any_content = false;
        if (peek().kind == Tok::Zero || peek().kind == Tok::One) {
            block.has_intercept = advance().kind == Tok::One;
            if (peek().kind == Tok::Plus) {
                advance();
                auto terms = parse_term_expr();
                slopes.insert(slopes.end(), terms.begin(), terms.end());
                any_content = true;
            } else {
                any_content = block.has_intercept;
            }
        } else if (peek().kind == Tok::Ident) {
            auto terms = parse_term_expr();
            slopes.insert(slopes.end(), terms.begin(), terms.end());
            any_content = true;
        }
        while (any_content && peek().kind == Tok::Plus) {
            advance();
            auto terms = parse_term_expr();
            slopes.insert(slopes.end(), terms.begin(), terms.end());
        }
        expect(Tok::Bar, "'|'");
        block.group = expect(Tok::Ident, "grouping factor").text;
        expect(Tok::RParen, "')'");
        if (!any_content || (!block.has_intercept && slopes.empty()))
            throw FormulaError("empty random-effects block for '" + block.group + "'", open.offset);
        add_unique(slopes, block.slopes, "random slope");
        return block;
    }

    // term_expr := colon_group ("*" colon_group)*
    std::vector<PositionedTerm> parse_term_expr() {
        std::size_t start = peek().offset;
        std::vector<std::vector<std::string>> groups;
        groups.push_back(parse_colon_group());
        while (peek().kind == Tok::Star) {
            advance();
            groups.push_back(parse_colon_group());
        }
        const std::size_t k = groups.size();
        if (k > 16) throw FormulaError("interaction chain too long", start);
        std::vector<unsigned> masks;
        for (unsigned m = 1; m < (1u << k); ++m) masks.push_back(m);
        auto indices = [](unsigned m) {
            std::vector<int> idx;
            for (int i = 0; m; ++i, m >>= 1)
                if (m & 1u) idx.push_back(i);
            return idx;
        };
        std::stable_sort(masks.begin(), masks.end(), [&](unsigned a, unsigned b) {
            int pa = std::popcount(a), pb = std::popcount(b);
            if (pa != pb) return pa < pb;
            return indices(a) < indices(b);
        });
        std::vector<PositionedTerm> out;
        for (unsigned m : masks) {
            Term t;
            for (int i : indices(m)) t.vars.insert(t.vars.end(), groups[i].begin(), groups[i].end());
            out.push_back({std::move(t), start});
        }
        return out;
    }

    std::vector<std::string> parse_colon_group() {
        std::vector<std::string> vars;
        vars.push_back(expect(Tok::Ident, "variable name").text);
        while (peek().kind == Tok::Colon) {
            advance();
            vars.push_back(expect(Tok::Ident, "variable name").text);
        }
        return vars;
    }

    static void add_unique(const std::vector<PositionedTerm>& in, std::vector<Term>& out, const char* where) {
        std::set<std::vector<std::string>> seen;
        for (const auto& pt : in) {
            if (!seen.insert(canonical(pt.term)).second)
                throw FormulaError(std::string("duplicate ") + where + " term '" + pt.term.label() + "'", pt.offset);
            out.push_back(pt.term);
        }
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

}  // namespace

ModelSpec parse_formula(std::string_view text) {
    if (text.empty()) throw FormulaError("empty formula", 0);
    return Parser(text).parse();
}

std::string to_string(const ModelSpec& spec) {
    std::string out = spec.response + " ~ ";
    bool first = true;
    auto sep = [&] {
        if (!first) out += " + ";
        first = false;
    };
    if (spec.fixed_terms.empty()) {
        sep();
        out += "1";
    }
    for (const auto& t : spec.fixed_terms) {
        sep();
        out += t.label();
    }
    for (const auto& b : spec.random_blocks) {
        sep();
        out += "(";
        out += b.has_intercept ? "1" : "0";
        for (const auto& s : b.slopes) out += " + " + s.label();
        out += " | " + b.group + ")";
    }
    return out;
}

void validate_spec(const ModelSpec& spec, const ColumnSchema& schema) {
    const ColumnInfo* resp = schema.find(spec.response);
    if (!resp) throw DataError("unknown column '" + spec.response + "' (response)");
    if (resp->kind != ColumnKind::Response)
        throw DataError("column '" + spec.response + "' is not declared as the response");
    if (resp->levels.size() != 2)
        throw DataError("response '" + spec.response + "' is not binary (" + std::to_string(resp->levels.size()) +
                        " levels)");

    auto check_term = [&](const Term& t) {
        for (const auto& v : t.vars) {
            const ColumnInfo* c = schema.find(v);
            if (!c) throw DataError("unknown column '" + v + "'");
            if (c->kind == ColumnKind::Response)
                throw DataError("column '" + v + "' is the response and cannot be a predictor");
        }
        if (t.has_repeat()) {
            for (const auto& v : t.vars) {
                if (std::count(t.vars.begin(), t.vars.end(), v) < 2) continue;
                if (schema.at(v).kind == ColumnKind::OrderedFactor)
                    throw DataError("ordered factor '" + v + "' interacted with itself in '" + t.label() + "'");
                throw DataError("variable '" + v + "' interacted with itself in '" + t.label() + "'");
            }
        }
    };
    for (const auto& t : spec.fixed_terms) check_term(t);
    for (const auto& b : spec.random_blocks) {
        const ColumnInfo* g = schema.find(b.group);
        if (!g) throw DataError("unknown column '" + b.group + "' (grouping factor)");
        if (g->kind != ColumnKind::Factor && g->kind != ColumnKind::OrderedFactor)
            throw DataError("grouping column '" + b.group + "' must be a factor");
        for (const auto& t : b.slopes) {
            check_term(t);
            for (const auto& v : t.vars)
                if (v == b.group)
                    throw DataError("grouping factor '" + b.group + "' used as its own slope");
        }
    }
}

}  // namespace sepfit
