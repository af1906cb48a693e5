#ifndef GAZESEG_CORE_HPP
#define GAZESEG_CORE_HPP

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gazeseg {

using Eigen::Dynamic;

/// Row-major 2-D grid; element (y, x) sits at data()[y * cols() + x].
template <typename Scalar>
using Grid = Eigen::Array<Scalar, Dynamic, Dynamic, Eigen::RowMajor>;

/// Intensities on a 0-255 scale.
using Image = Grid<double>;
/// 0 = background, 1 = foreground.
using Mask = Grid<std::uint8_t>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Dynamic, Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Dynamic, 1>;

/// Input violates a documented precondition or invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Tensor extents are incompatible with the operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Per-pixel D-vectors stored channel-major: column p = y * width + x holds
/// the feature of pixel (y, x).
template <typename Scalar>
struct FeatureMap {
    int height = 0;
    int width = 0;
    Matrix<Scalar> values;

    FeatureMap() = default;
    FeatureMap(int h, int w, int channels)
        : height(h), width(w), values(Matrix<Scalar>::Zero(channels, Eigen::Index(h) * w)) {}
    FeatureMap(int h, int w, Matrix<Scalar> v) : height(h), width(w), values(std::move(v)) {
        if (values.cols() != Eigen::Index(h) * w)
            throw ShapeError("feature matrix column count does not match height*width");
    }

    int channels() const { return int(values.rows()); }
    int pixels() const { return height * width; }
    bool same_shape(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels() == o.channels();
    }

    template <typename To>
    FeatureMap<To> cast() const { return FeatureMap<To>(height, width, values.template cast<To>()); }
};

/// Two-channel map: row 0 background probability, row 1 foreground.
template <typename Scalar>
using ProbabilityMap = FeatureMap<Scalar>;

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

template <typename A, typename B>
void require_same_extent(const A& a, const B& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(std::string(what) + ": extents differ");
}

}  // namespace gazeseg

#endif
