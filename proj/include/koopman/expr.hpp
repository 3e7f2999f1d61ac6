#pragma once

#include <Eigen/Dense>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "koopman/dual.hpp"
#include "koopman/errors.hpp"

// Arithmetic expression ASTs for vector-field components.
//
// Grammar (standard precedence, ^ right-associative and binding tighter than
// unary minus):
//
//   sum    := product (('+'|'-') product)*
//   product:= unary (('*'|'/') unary)*
//   unary  := '-' unary | power
//   power  := atom ('^' unary)?        exponent must fold to a constant
//   atom   := number | variable | func '(' sum ')' | '(' sum ')'
//
// Variables are x1..xd. Functions: sin, cos, exp, sqrt, tanh. Exponents are
// constant-folded at parse time; integer exponents evaluate by repeated
// multiplication so negative bases stay exact, real exponents go through
// exp*log and require a positive base.

namespace koopman {

enum class FuncName { Sin, Cos, Exp, Sqrt, Tanh };

struct ExprNode {
    enum class Kind { Constant, Var, Neg, Add, Sub, Mul, Div, Pow, Func };

    Kind kind;
    double value = 0.0;          // Constant value, or Pow real exponent
    long long int_exponent = 0;  // Pow with integer exponent
    bool exponent_is_integer = false;
    int var_index = 0;           // 1-based
    FuncName func = FuncName::Sin;
    std::unique_ptr<ExprNode> a;  // unary child / left / Pow base
    std::unique_ptr<ExprNode> b;  // right

    std::unique_ptr<ExprNode> clone() const {
        auto n = std::make_unique<ExprNode>();
        n->kind = kind;
        n->value = value;
        n->int_exponent = int_exponent;
        n->exponent_is_integer = exponent_is_integer;
        n->var_index = var_index;
        n->func = func;
        if (a) n->a = a->clone();
        if (b) n->b = b->clone();
        return n;
    }
};

namespace detail {

inline double scalar_value(double x) { return x; }
inline double scalar_value(const Dual& x) { return x.value(); }

// Plain-double counterparts of the Dual math functions, declared before the
// templated evaluator so unqualified calls resolve for both scalar types.
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double exp(double x) { return std::exp(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double tanh(double x) { return std::tanh(x); }

template <typename T>
T make_constant(double v, const std::vector<T>& x) {
    if constexpr (std::is_same_v<T, Dual>) {
        Eigen::Index dim = x.empty() ? 0 : x.front().grad().size();
        return Dual::constant(v, dim);
    } else {
        return v;
    }
}

template <typename T>
T eval_node(const ExprNode& n, const std::vector<T>& x) {
    using Kind = ExprNode::Kind;
    switch (n.kind) {
        case Kind::Constant:
            return make_constant<T>(n.value, x);
        case Kind::Var:
            return x[static_cast<std::size_t>(n.var_index - 1)];
        case Kind::Neg:
            return -eval_node(*n.a, x);
        case Kind::Add:
            return eval_node(*n.a, x) + eval_node(*n.b, x);
        case Kind::Sub:
            return eval_node(*n.a, x) - eval_node(*n.b, x);
        case Kind::Mul:
            return eval_node(*n.a, x) * eval_node(*n.b, x);
        case Kind::Div: {
            T num = eval_node(*n.a, x);
            T den = eval_node(*n.b, x);
            if (scalar_value(den) == 0.0)
                throw DomainError("division by zero");
            return num / den;
        }
        case Kind::Pow: {
            T base = eval_node(*n.a, x);
            if (n.exponent_is_integer) return pow_int(base, n.int_exponent);
            return pow_real(base, n.value);
        }
        case Kind::Func: {
            T arg = eval_node(*n.a, x);
            switch (n.func) {
                case FuncName::Sin: return sin(arg);
                case FuncName::Cos: return cos(arg);
                case FuncName::Exp: return exp(arg);
                case FuncName::Sqrt:
                    if (scalar_value(arg) < 0.0)
                        throw DomainError("sqrt of a negative value");
                    return sqrt(arg);
                case FuncName::Tanh: return tanh(arg);
            }
            throw Error("unreachable");
        }
    }
    throw Error("unreachable");
}

std::string format_real(double v);

}  // namespace detail

class Expr {
public:
    Expr() = default;
    Expr(std::unique_ptr<ExprNode> root, int dimension, std::string text)
        : root_(std::move(root)),
          dimension_(dimension),
          text_(std::move(text)) {}

    Expr(const Expr& other)
        : root_(other.root_ ? other.root_->clone() : nullptr),
          dimension_(other.dimension_),
          text_(other.text_) {}
    Expr& operator=(const Expr& other) {
        if (this != &other) {
            root_ = other.root_ ? other.root_->clone() : nullptr;
            dimension_ = other.dimension_;
            text_ = other.text_;
        }
        return *this;
    }
    Expr(Expr&&) = default;
    Expr& operator=(Expr&&) = default;

    const ExprNode& root() const { return *root_; }
    int dimension() const { return dimension_; }
    const std::string& text() const { return text_; }
    bool valid() const { return root_ != nullptr; }

    template <typename T>
    T eval_with(const std::vector<T>& x) const {
        return detail::eval_node<T>(*root_, x);
    }

    double eval(const Eigen::VectorXd& x) const {
        std::vector<double> v(x.data(), x.data() + x.size());
        return eval_with<double>(v);
    }

    // Value and full gradient in one forward pass.
    Dual eval_dual(const Eigen::VectorXd& x) const {
        std::vector<Dual> v;
        v.reserve(static_cast<std::size_t>(x.size()));
        for (Eigen::Index i = 0; i < x.size(); ++i)
            v.push_back(Dual::variable(x(i), i, x.size()));
        return eval_with<Dual>(v);
    }

    std::string str() const { return print(*root_); }

private:
    static int precedence(const ExprNode& n) {
        using Kind = ExprNode::Kind;
        switch (n.kind) {
            case Kind::Add:
            case Kind::Sub: return 1;
            case Kind::Mul:
            case Kind::Div: return 2;
            case Kind::Neg: return 3;
            case Kind::Pow: return 4;
            default: return 5;
        }
    }

    static std::string wrap(const ExprNode& child, int min_prec) {
        std::string s = print(child);
        if (precedence(child) < min_prec) return "(" + s + ")";
        return s;
    }

    static std::string print(const ExprNode& n) {
        using Kind = ExprNode::Kind;
        switch (n.kind) {
            case Kind::Constant:
                return detail::format_real(n.value);
            case Kind::Var:
                return "x" + std::to_string(n.var_index);
            case Kind::Neg:
                return "-" + wrap(*n.a, 3);
            case Kind::Add:
                return wrap(*n.a, 1) + " + " + wrap(*n.b, 1);
            case Kind::Sub:
                // right side needs parens at equal precedence: a - (b - c)
                return wrap(*n.a, 1) + " - " + wrap(*n.b, 2);
            case Kind::Mul:
                return wrap(*n.a, 2) + "*" + wrap(*n.b, 2);
            case Kind::Div:
                return wrap(*n.a, 2) + "/" + wrap(*n.b, 3);
            case Kind::Pow: {
                std::string base = wrap(*n.a, 5);
                if (n.exponent_is_integer && n.int_exponent >= 0)
                    return base + "^" + std::to_string(n.int_exponent);
                if (n.exponent_is_integer)
                    return base + "^(" + std::to_string(n.int_exponent) + ")";
                return base + "^(" + detail::format_real(n.value) + ")";
            }
            case Kind::Func: {
                const char* name = "";
                switch (n.func) {
                    case FuncName::Sin: name = "sin"; break;
                    case FuncName::Cos: name = "cos"; break;
                    case FuncName::Exp: name = "exp"; break;
                    case FuncName::Sqrt: name = "sqrt"; break;
                    case FuncName::Tanh: name = "tanh"; break;
                }
                return std::string(name) + "(" + print(*n.a) + ")";
            }
        }
        return "";
    }

    std::unique_ptr<ExprNode> root_;
    int dimension_ = 0;
    std::string text_;
};

namespace detail {

inline std::string format_real(double v) {
    if (v == std::nearbyint(v) && std::abs(v) < 1e15) {
        long long i = static_cast<long long>(v);
        return std::to_string(i);
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Token {
    enum class Type {
        Number, Ident, Plus, Minus, Star, Slash, Caret, LParen, RParen, End
    };
    Type type;
    double number = 0.0;
    std::string ident;
    std::size_t pos = 0;
};

class Tokenizer {
public:
    explicit Tokenizer(const std::string& text) : text_(text) {}

    std::vector<Token> run() {
        std::vector<Token> out;
        std::size_t i = 0;
        const std::size_t n = text_.size();
        while (i < n) {
            char c = text_[i];
            if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++i;
                continue;
            }
            std::size_t pos = i;
            if ((c >= '0' && c <= '9') || c == '.') {
                double value = 0.0;
                auto [ptr, ec] = std::from_chars(
                    text_.data() + i, text_.data() + n, value);
                if (ec != std::errc{} || ptr == text_.data() + i)
                    throw SyntaxError("malformed number", pos);
                i = static_cast<std::size_t>(ptr - text_.data());
                out.push_back({Token::Type::Number, value, "", pos});
                continue;
            }
            if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') {
                std::size_t j = i;
                while (j < n && (std::isalnum(static_cast<unsigned char>(text_[j])) ||
                                 text_[j] == '_'))
                    ++j;
                out.push_back({Token::Type::Ident, 0.0,
                               text_.substr(i, j - i), pos});
                i = j;
                continue;
            }
            Token::Type t;
            switch (c) {
                case '+': t = Token::Type::Plus; break;
                case '-': t = Token::Type::Minus; break;
                case '*': t = Token::Type::Star; break;
                case '/': t = Token::Type::Slash; break;
                case '^': t = Token::Type::Caret; break;
                case '(': t = Token::Type::LParen; break;
                case ')': t = Token::Type::RParen; break;
                default:
                    throw SyntaxError(
                        std::string("unexpected character '") + c + "'", pos);
            }
            out.push_back({t, 0.0, "", pos});
            ++i;
        }
        out.push_back({Token::Type::End, 0.0, "", n});
        return out;
    }

private:
    const std::string& text_;
};

class Parser {
public:
    Parser(std::vector<Token> tokens, int dimension)
        : tokens_(std::move(tokens)), dimension_(dimension) {}

    std::unique_ptr<ExprNode> run() {
        auto e = parse_sum();
        if (peek().type != Token::Type::End)
            throw SyntaxError("unexpected trailing input", peek().pos);
        return e;
    }

private:
    using NodePtr = std::unique_ptr<ExprNode>;

    const Token& peek() const { return tokens_[index_]; }
    const Token& advance() { return tokens_[index_++]; }
    bool accept(Token::Type t) {
        if (peek().type == t) {
            ++index_;
            return true;
        }
        return false;
    }

    NodePtr parse_sum() {
        NodePtr left = parse_product();
        for (;;) {
            if (accept(Token::Type::Plus))
                left = binary(ExprNode::Kind::Add, std::move(left),
                              parse_product());
            else if (accept(Token::Type::Minus))
                left = binary(ExprNode::Kind::Sub, std::move(left),
                              parse_product());
            else
                return left;
        }
    }

    NodePtr parse_product() {
        NodePtr left = parse_unary();
        for (;;) {
            if (accept(Token::Type::Star))
                left = binary(ExprNode::Kind::Mul, std::move(left),
                              parse_unary());
            else if (accept(Token::Type::Slash))
                left = binary(ExprNode::Kind::Div, std::move(left),
                              parse_unary());
            else
                return left;
        }
    }

    NodePtr parse_unary() {
        if (accept(Token::Type::Minus)) {
            auto n = std::make_unique<ExprNode>();
            n->kind = ExprNode::Kind::Neg;
            n->a = parse_unary();
            return n;
        }
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_atom();
        if (!accept(Token::Type::Caret)) return base;
        std::size_t caret_pos = tokens_[index_ - 1].pos;
        // The exponent recurses through unary, which makes ^ right-associative
        // and lets x^-2 parse. It must fold to a constant.
        NodePtr raw = parse_unary();
        std::optional<double> folded = fold_constant(*raw);
        if (!folded)
            throw SyntaxError("exponent must be a constant", caret_pos);
        auto n = std::make_unique<ExprNode>();
        n->kind = ExprNode::Kind::Pow;
        n->a = std::move(base);
        double e = *folded;
        if (e == std::nearbyint(e) && std::abs(e) < 1e15) {
            n->exponent_is_integer = true;
            n->int_exponent = static_cast<long long>(e);
        }
        n->value = e;
        return n;
    }

    NodePtr parse_atom() {
        const Token& t = peek();
        switch (t.type) {
            case Token::Type::Number: {
                advance();
                auto n = std::make_unique<ExprNode>();
                n->kind = ExprNode::Kind::Constant;
                n->value = t.number;
                return n;
            }
            case Token::Type::LParen: {
                advance();
                NodePtr inner = parse_sum();
                if (!accept(Token::Type::RParen))
                    throw SyntaxError("expected ')'", peek().pos);
                return inner;
            }
            case Token::Type::Ident:
                advance();
                return resolve_ident(t);
            case Token::Type::End:
                throw SyntaxError("unexpected end of input", t.pos);
            default:
                throw SyntaxError("unexpected token", t.pos);
        }
    }

    NodePtr resolve_ident(const Token& t) {
        const std::string& name = t.ident;
        if (name.size() >= 2 && name[0] == 'x' &&
            name.find_first_not_of("0123456789", 1) == std::string::npos) {
            long long k = -1;
            try {
                k = std::stoll(name.substr(1));
            } catch (const std::exception&) {
                k = -1;
            }
            if (k < 1 || k > dimension_)
                throw IndexOutOfRange(
                    "variable " + name + " out of range for dimension " +
                    std::to_string(dimension_) + " (at position " +
                    std::to_string(t.pos) + ")");
            auto n = std::make_unique<ExprNode>();
            n->kind = ExprNode::Kind::Var;
            n->var_index = static_cast<int>(k);
            return n;
        }
        std::optional<FuncName> f = func_by_name(name);
        if (!f)
            throw UnknownIdentifier("unknown identifier '" + name +
                                    "' (at position " + std::to_string(t.pos) +
                                    ")");
        if (!accept(Token::Type::LParen))
            throw SyntaxError("expected '(' after function name", peek().pos);
        auto n = std::make_unique<ExprNode>();
        n->kind = ExprNode::Kind::Func;
        n->func = *f;
        n->a = parse_sum();
        if (!accept(Token::Type::RParen))
            throw SyntaxError("expected ')'", peek().pos);
        return n;
    }

    static std::optional<FuncName> func_by_name(const std::string& s) {
        if (s == "sin") return FuncName::Sin;
        if (s == "cos") return FuncName::Cos;
        if (s == "exp") return FuncName::Exp;
        if (s == "sqrt") return FuncName::Sqrt;
        if (s == "tanh") return FuncName::Tanh;
        return std::nullopt;
    }

    static NodePtr binary(ExprNode::Kind kind, NodePtr left, NodePtr right) {
        auto n = std::make_unique<ExprNode>();
        n->kind = kind;
        n->a = std::move(left);
        n->b = std::move(right);
        return n;
    }

    // Evaluates variable-free subtrees; nullopt if a variable appears.
    static std::optional<double> fold_constant(const ExprNode& n) {
        using Kind = ExprNode::Kind;
        switch (n.kind) {
            case Kind::Constant: return n.value;
            case Kind::Var: return std::nullopt;
            case Kind::Neg: {
                auto v = fold_constant(*n.a);
                if (!v) return std::nullopt;
                return -*v;
            }
            case Kind::Add:
            case Kind::Sub:
            case Kind::Mul:
            case Kind::Div: {
                auto l = fold_constant(*n.a);
                auto r = fold_constant(*n.b);
                if (!l || !r) return std::nullopt;
                switch (n.kind) {
                    case Kind::Add: return *l + *r;
                    case Kind::Sub: return *l - *r;
                    case Kind::Mul: return *l * *r;
                    default:
                        if (*r == 0.0) throw DomainError("division by zero");
                        return *l / *r;
                }
            }
            case Kind::Pow: {
                auto b = fold_constant(*n.a);
                if (!b) return std::nullopt;
                if (n.exponent_is_integer) return pow_int(*b, n.int_exponent);
                return pow_real(*b, n.value);
            }
            case Kind::Func: {
                auto v = fold_constant(*n.a);
                if (!v) return std::nullopt;
                switch (n.func) {
                    case FuncName::Sin: return std::sin(*v);
                    case FuncName::Cos: return std::cos(*v);
                    case FuncName::Exp: return std::exp(*v);
                    case FuncName::Sqrt:
                        if (*v < 0.0)
                            throw DomainError("sqrt of a negative value");
                        return std::sqrt(*v);
                    case FuncName::Tanh: return std::tanh(*v);
                }
                return std::nullopt;
            }
        }
        return std::nullopt;
    }

    std::vector<Token> tokens_;
    int dimension_;
    std::size_t index_ = 0;
};

}  // namespace detail

inline Expr parse(const std::string& text, int dimension) {
    if (dimension < 1)
        throw ConfigError("expression dimension must be at least 1");
    detail::Tokenizer tok(text);
    detail::Parser parser(tok.run(), dimension);
    return Expr(parser.run(), dimension, text);
}

inline double eval(const Expr& e, const Eigen::VectorXd& x) {
    return e.eval(x);
}

inline std::pair<double, Eigen::VectorXd> eval_dual(const Expr& e,
                                                    const Eigen::VectorXd& x) {
    Dual d = e.eval_dual(x);
    return {d.value(), d.grad()};
}

}  // namespace koopman
