#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace hydrolimit {

using Vec3 = std::array<double, 3>;
using Field = std::vector<double>;

enum class ErrorKind {
    Domain,
    NotRarefaction,
    Vacuum,
    Numeric,
    IncompatibleWaveStrength,
    Incompatibility,
    Projection,
    Consistency,
    Positivity,
    CflViolation,
    MemoryBudget,
    Config,
};

const char* to_string(ErrorKind kind);

// RFC 4180 field: quoted when it holds a comma, quote or line break.
std::string csv_quote(const std::string& s);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec3& a) { return dot(a, a); }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace hydrolimit
