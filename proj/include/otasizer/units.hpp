#pragma once

#include "otasizer/error.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace otasizer::units {

namespace detail {

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

} // namespace detail

/// Parses a SPICE-style number with an optional engineering suffix
/// (f p n u m k meg g, case-insensitive). Trailing unit letters are ignored,
/// so "1pF" and "1p" are equal. Returns nullopt on malformed input.
inline std::optional<double> try_parse_value(std::string_view text) {
    if (text.empty()) return std::nullopt;
    double mantissa = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, mantissa);
    if (ec != std::errc() || ptr == first) return std::nullopt;
    std::string rest = detail::lower(std::string_view(ptr, static_cast<std::size_t>(last - ptr)));
    int exp10 = 0;
    std::size_t used = 0;
    if (rest.rfind("meg", 0) == 0) {
        exp10 = 6;
        used = 3;
    } else if (!rest.empty()) {
        switch (rest[0]) {
        case 'f': exp10 = -15; used = 1; break;
        case 'p': exp10 = -12; used = 1; break;
        case 'n': exp10 = -9; used = 1; break;
        case 'u': exp10 = -6; used = 1; break;
        case 'm': exp10 = -3; used = 1; break;
        case 'k': exp10 = 3; used = 1; break;
        case 'g': exp10 = 9; used = 1; break;
        default: break;
        }
    }
    for (std::size_t i = used; i < rest.size(); ++i) {
        if (!std::isalpha(static_cast<unsigned char>(rest[i]))) return std::nullopt;
    }
    if (exp10 == 0) return mantissa;
    // Re-read with the suffix folded into the exponent so "180n" rounds like "180e-9".
    std::string digits(first, ptr);
    if (digits.find_first_of("eE") != std::string::npos) return mantissa * std::pow(10.0, exp10);
    digits += "e" + std::to_string(exp10);
    double v = 0.0;
    std::from_chars(digits.data(), digits.data() + digits.size(), v);
    return v;
}

inline double parse_value(std::string_view text) {
    auto v = try_parse_value(text);
    if (!v) throw Error(Errc::SyntaxError, "malformed number '" + std::string(text) + "'");
    return *v;
}

/// Shortest text that reads back to exactly the same double.
inline std::string exact(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    (void)ec;
    return std::string(buf.data(), ptr);
}

/// Fixed 17-significant-digit rendering used by file formats.
inline std::string full(double v) {
    std::array<char, 64> buf{};
    std::snprintf(buf.data(), buf.size(), "%.17g", v);
    return std::string(buf.data());
}

/// Rounds |v| to `sig` significant digits and renders it without exponent,
/// trailing zeros stripped ("2.50" -> "2.5", "100" stays "100").
inline std::string sig_digits(double v, int sig = 3) {
    if (v == 0.0) return "0";
    const double mag = std::abs(v);
    int exp10 = static_cast<int>(std::floor(std::log10(mag)));
    const double q = std::pow(10.0, exp10 - sig + 1);
    double rounded = std::round(mag / q) * q;
    if (rounded >= std::pow(10.0, exp10 + 1)) ++exp10;
    int decimals = std::max(0, sig - 1 - exp10);
    std::array<char, 64> buf{};
    std::snprintf(buf.data(), buf.size(), "%.*f", decimals, rounded);
    std::string s(buf.data());
    if (s.find('.') != std::string::npos) {
        while (!s.empty() && s.back() == '0') s.pop_back();
        if (!s.empty() && s.back() == '.') s.pop_back();
    }
    return (v < 0 ? "-" : "") + s;
}

enum class Quantity { Siemens, Farad, Ampere };

struct UnitChoice {
    std::string_view suffix;
    double scale;
};

inline constexpr std::array<UnitChoice, 2> kSiemensUnits{{{"mS", 1e-3}, {"uS", 1e-6}}};
inline constexpr std::array<UnitChoice, 3> kFaradUnits{{{"pF", 1e-12}, {"fF", 1e-15}, {"aF", 1e-18}}};
inline constexpr std::array<UnitChoice, 2> kAmpereUnits{{{"mA", 1e-3}, {"uA", 1e-6}}};

/// Engineering rendering with 3 significant digits and a unit drawn from
/// {aF, fF, pF, uS, mS, uA, mA}: 2.5e-3 S -> "2.5mS", 5.41e-16 F -> "541aF".
inline std::string engineering(double v, Quantity q, int sig = 3) {
    const double mag = std::abs(v);
    auto pick = [&](auto const& table) {
        // Round first so 999.7uS is promoted to 1mS rather than printed as 1000uS.
        for (auto const& u : table) {
            std::string body = sig_digits(mag / u.scale, sig);
            if (std::stod(body) >= 1.0 || &u == &table.back()) return body + std::string(u.suffix);
        }
        return std::string();
    };
    std::string body;
    switch (q) {
    case Quantity::Siemens: body = pick(kSiemensUnits); break;
    case Quantity::Farad: body = pick(kFaradUnits); break;
    case Quantity::Ampere: body = pick(kAmpereUnits); break;
    }
    return (v < 0 ? "-" : "") + body;
}

/// Scale of a rendered engineering unit, or nullopt when the suffix is unknown.
inline std::optional<std::pair<double, Quantity>> unit_scale(std::string_view suffix) {
    for (auto const& u : kSiemensUnits)
        if (u.suffix == suffix) return std::pair{u.scale, Quantity::Siemens};
    for (auto const& u : kFaradUnits)
        if (u.suffix == suffix) return std::pair{u.scale, Quantity::Farad};
    for (auto const& u : kAmpereUnits)
        if (u.suffix == suffix) return std::pair{u.scale, Quantity::Ampere};
    return std::nullopt;
}

/// Frequency with an SI prefix, `sig` significant digits: 1.234e7 -> "12.34MHz".
inline std::string hertz(double f, int sig = 4) {
    struct P {
        std::string_view s;
        double scale;
    };
    static constexpr std::array<P, 4> table{{{"GHz", 1e9}, {"MHz", 1e6}, {"kHz", 1e3}, {"Hz", 1.0}}};
    for (auto const& p : table) {
        std::string body = sig_digits(f / p.scale, sig);
        if (std::stod(body) >= 1.0 || p.scale == 1.0) return body + std::string(p.s);
    }
    return sig_digits(f, sig) + "Hz";
}

} // namespace otasizer::units
