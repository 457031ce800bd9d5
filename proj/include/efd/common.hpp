#pragma once

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace efd {

inline constexpr const char* kVersion = "0.1.0";

using Index = std::int64_t;

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------
struct Shape {
    std::vector<Index> dims;

    Shape() = default;
    Shape(std::initializer_list<Index> d) : dims(d) {}
    explicit Shape(std::vector<Index> d) : dims(std::move(d)) {}

    Index numel() const {
        Index n = 1;
        for (Index d : dims) n *= d;
        return n;
    }
    int rank() const { return static_cast<int>(dims.size()); }
    Index operator[](int i) const { return dims[static_cast<size_t>(i)]; }
    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "[";
        for (size_t i = 0; i < dims.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims[i]);
        }
        return s + "]";
    }
};

// ---------------------------------------------------------------------------
// Errors. The CLI maps these to its exit-code contract.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex_u64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

template <class T>
T clamp(T v, T lo, T hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace efd
