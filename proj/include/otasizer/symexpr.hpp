#pragma once

// Symbolic admittances in the Laplace variable s.
//
// An AdmittanceExpr is a canonical set of terms coeff * param * s^k. A term
// with an empty parameter name is a constant. RationalExpr holds an
// unsimplified numerator/denominator pair; impedances are reciprocals.

#include "otasizer/error.hpp"

#include <algorithm>
#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace otasizer {

using Complex = std::complex<double>;
using Bindings = std::unordered_map<std::string, double>;

/// Small exact signed rational, always normalised with den > 0.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    constexpr Rational() = default;
    constexpr Rational(std::int64_t n, std::int64_t d = 1) : num(n), den(d) { normalise(); }

    constexpr void normalise() {
        if (den < 0) {
            num = -num;
            den = -den;
        }
        const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
        if (num == 0) den = 1;
    }

    constexpr bool is_zero() const { return num == 0; }
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }

    friend constexpr Rational operator+(Rational a, Rational b) {
        return Rational(a.num * b.den + b.num * a.den, a.den * b.den);
    }
    friend constexpr Rational operator-(Rational a) { return Rational(-a.num, a.den); }
    friend constexpr Rational operator*(Rational a, Rational b) {
        return Rational(a.num * b.num, a.den * b.den);
    }
    friend constexpr bool operator==(Rational a, Rational b) = default;
};

struct Term {
    std::string param; // empty for a constant
    int s_power = 0;
    Rational coeff{1};

    friend bool operator==(const Term&, const Term&) = default;
};

class AdmittanceExpr {
public:
    AdmittanceExpr() = default;

    static AdmittanceExpr constant(Rational c) {
        AdmittanceExpr e;
        e.insert({"", 0, c});
        return e;
    }
    static AdmittanceExpr one() { return constant(Rational(1)); }

    static AdmittanceExpr term(std::string param, int s_power = 0, Rational coeff = Rational(1)) {
        AdmittanceExpr e;
        e.insert({std::move(param), s_power, coeff});
        return e;
    }

    /// Builds from arbitrary terms, merging duplicates and dropping zeros.
    static AdmittanceExpr from_terms(const std::vector<Term>& terms) {
        AdmittanceExpr e;
        for (auto const& t : terms) e.insert(t);
        return e;
    }

    const std::vector<Term>& terms() const { return terms_; }
    bool empty() const { return terms_.empty(); }
    bool is_one() const {
        return terms_.size() == 1 && terms_[0].param.empty() && terms_[0].s_power == 0 &&
               terms_[0].coeff == Rational(1);
    }

    friend AdmittanceExpr operator+(const AdmittanceExpr& a, const AdmittanceExpr& b) {
        AdmittanceExpr out = a;
        for (auto const& t : b.terms_) out.insert(t);
        return out;
    }
    friend AdmittanceExpr operator-(const AdmittanceExpr& a) { return a.scaled(Rational(-1)); }

    AdmittanceExpr scaled(Rational k) const {
        AdmittanceExpr out;
        if (k.is_zero()) return out;
        out.terms_ = terms_;
        for (auto& t : out.terms_) t.coeff = t.coeff * k;
        return out;
    }

    AdmittanceExpr& operator+=(const AdmittanceExpr& b) {
        for (auto const& t : b.terms_) insert(t);
        return *this;
    }

    friend bool operator==(const AdmittanceExpr&, const AdmittanceExpr&) = default;

    Complex eval(const Bindings& bindings, Complex s) const {
        Complex acc{0.0, 0.0};
        for (auto const& t : terms_) {
            double p = 1.0;
            if (!t.param.empty()) {
                auto it = bindings.find(t.param);
                if (it == bindings.end()) throw Error(Errc::UnboundParameter, t.param);
                p = it->second;
            }
            Complex sk{1.0, 0.0};
            for (int k = 0; k < t.s_power; ++k) sk *= s;
            acc += t.coeff.value() * p * sk;
        }
        return acc;
    }

    /// Canonical text: terms in canonical order, `s` prefix per power of s,
    /// no spaces. `name` maps a parameter to its printed form.
    std::string render(const std::function<std::string(const std::string&)>& name = {}) const {
        if (terms_.empty()) return "0";
        std::string out;
        bool first = true;
        for (auto const& t : terms_) {
            Rational c = t.coeff;
            const bool neg = c.num < 0;
            if (neg) c = -c;
            if (neg) out += '-';
            else if (!first) out += '+';
            first = false;
            std::string body = t.param.empty() ? std::string() : (name ? name(t.param) : t.param);
            std::string coeff;
            if (c.den != 1) coeff = "(" + std::to_string(c.num) + "/" + std::to_string(c.den) + ")";
            else if (c.num != 1 || body.empty()) coeff = std::to_string(c.num);
            out += coeff;
            for (int k = 0; k < t.s_power; ++k) out += 's';
            out += body;
        }
        return out;
    }

    std::vector<std::string> params() const {
        std::vector<std::string> out;
        for (auto const& t : terms_)
            if (!t.param.empty()) out.push_back(t.param);
        return out;
    }

private:
    static bool term_less(const Term& a, const Term& b) {
        if (a.param != b.param) return a.param < b.param;
        return a.s_power < b.s_power;
    }

    void insert(const Term& t) {
        if (t.coeff.is_zero()) return;
        auto it = std::lower_bound(terms_.begin(), terms_.end(), t, term_less);
        if (it != terms_.end() && it->param == t.param && it->s_power == t.s_power) {
            it->coeff = it->coeff + t.coeff;
            if (it->coeff.is_zero()) terms_.erase(it);
            return;
        }
        terms_.insert(it, t);
    }

    std::vector<Term> terms_;
};

/// sign * numerator / denominator, kept unsimplified.
struct RationalExpr {
    AdmittanceExpr numerator = AdmittanceExpr::one();
    AdmittanceExpr denominator = AdmittanceExpr::one();
    int sign = 1;

    RationalExpr() = default;
    RationalExpr(AdmittanceExpr num, AdmittanceExpr den = AdmittanceExpr::one(), int sgn = 1)
        : numerator(std::move(num)), denominator(std::move(den)), sign(sgn) {
        if (denominator.empty()) throw Error(Errc::EmptyExpr, "denominator is identically zero");
    }

    bool is_admittance() const { return denominator.is_one(); }

    Complex eval(const Bindings& bindings, Complex s) const {
        const Complex den = denominator.eval(bindings, s);
        if (std::abs(den) < 1e-300) throw Error(Errc::DivisionNearZero, "denominator " + denominator.render());
        return static_cast<double>(sign) * numerator.eval(bindings, s) / den;
    }

    std::string render(const std::function<std::string(const std::string&)>& name = {}) const {
        std::string out = sign < 0 ? "-" : "";
        if (denominator.is_one()) {
            const std::string n = numerator.render(name);
            return sign < 0 ? "-(" + n + ")" : n;
        }
        if (numerator.is_one()) return out + "1/(" + denominator.render(name) + ")";
        return out + "(" + numerator.render(name) + ")/(" + denominator.render(name) + ")";
    }

    friend bool operator==(const RationalExpr&, const RationalExpr&) = default;
};

/// 1/a. Throws EmptyExpr for an empty admittance.
inline RationalExpr reciprocal(const AdmittanceExpr& a) {
    if (a.empty()) throw Error(Errc::EmptyExpr, "reciprocal of an empty admittance");
    return RationalExpr(AdmittanceExpr::one(), a);
}

inline RationalExpr reciprocal(const RationalExpr& r) {
    if (r.numerator.empty()) throw Error(Errc::EmptyExpr, "reciprocal of a zero expression");
    return RationalExpr(r.denominator, r.numerator, r.sign);
}

} // namespace otasizer
