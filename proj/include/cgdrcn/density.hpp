// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cgdrcn/errors.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

/// Per-pixel crowd density; the pixel sum is the person count of the covered region.
struct DensityMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::uint32_t scale_divisor = 1;
    std::vector<double> values;

    DensityMap() = default;
    DensityMap(std::size_t h, std::size_t w, std::uint32_t divisor = 1)
        : height(h), width(w), scale_divisor(divisor), values(h * w, 0.0) {}

    double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

    /// [1, H, W] view for the network side.
    template <std::floating_point T>
    Tensor<T> to_tensor() const {
        return Tensor<T>({1, height, width}, std::vector<T>(values.begin(), values.end()));
    }

    friend bool operator==(const DensityMap&, const DensityMap&) = default;
};

struct GaussianSpec {
    double sigma = 4.0;
    double truncation_radius = 16.0;

    static GaussianSpec with_sigma(double sigma) { return {sigma, 4.0 * sigma}; }

    void validate() const {
        if (!(sigma > 0.0)) throw UsageError("gaussian sigma must be positive");
        if (truncation_radius < 3.0 * sigma) throw UsageError("truncation radius must be at least 3 sigma");
    }
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

class HeadOutOfBounds : public ValidationError {
public:
    explicit HeadOutOfBounds(std::size_t index)
        : ValidationError("head " + std::to_string(index) + " lies outside the image"), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

inline double count(const DensityMap& map) {
    double total = 0.0;
    for (double v : map.values) total += v;
    return total;
}

/// Places a normalized Gaussian at every head. Pixel (i, j) is centred at (j + 0.5, i + 0.5).
/// Each kernel is evaluated on the square truncation window clipped to the image and
/// renormalized to unit mass there, so heads near the border still count as one.
inline DensityMap rasterize(std::span<const Point> heads, std::size_t width, std::size_t height,
                            const GaussianSpec& spec) {
    spec.validate();
    if (width == 0 || height == 0) throw UsageError("rasterize: image extents must be positive");
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const auto& p = heads[i];
        if (!(p.x >= 0.0 && p.x < static_cast<double>(width) && p.y >= 0.0 && p.y < static_cast<double>(height)))
            throw HeadOutOfBounds(i);
    }

    DensityMap map(height, width, 1);
    const double inv_two_var = 1.0 / (2.0 * spec.sigma * spec.sigma);
    std::vector<double> gx, gy;
    for (const auto& p : heads) {
        const auto x0 = static_cast<long>(std::ceil(p.x - spec.truncation_radius - 0.5));
        const auto x1 = static_cast<long>(std::floor(p.x + spec.truncation_radius - 0.5));
        const auto y0 = static_cast<long>(std::ceil(p.y - spec.truncation_radius - 0.5));
        const auto y1 = static_cast<long>(std::floor(p.y + spec.truncation_radius - 0.5));
        const long cx0 = std::max(x0, 0L), cx1 = std::min(x1, static_cast<long>(width) - 1);
        const long cy0 = std::max(y0, 0L), cy1 = std::min(y1, static_cast<long>(height) - 1);

        // separable kernel: exp(-(dx^2+dy^2)/2s^2) = exp(-dx^2/2s^2) exp(-dy^2/2s^2)
        gx.assign(static_cast<std::size_t>(cx1 - cx0 + 1), 0.0);
        gy.assign(static_cast<std::size_t>(cy1 - cy0 + 1), 0.0);
        double sx = 0.0, sy = 0.0;
        for (long j = cx0; j <= cx1; ++j) {
            const double d = static_cast<double>(j) + 0.5 - p.x;
            sx += gx[static_cast<std::size_t>(j - cx0)] = std::exp(-d * d * inv_two_var);
        }
        for (long i = cy0; i <= cy1; ++i) {
            const double d = static_cast<double>(i) + 0.5 - p.y;
            sy += gy[static_cast<std::size_t>(i - cy0)] = std::exp(-d * d * inv_two_var);
        }
        const double norm = 1.0 / (sx * sy);
        for (long i = cy0; i <= cy1; ++i) {
            double* row = map.values.data() + static_cast<std::size_t>(i) * width;
            const double wy = gy[static_cast<std::size_t>(i - cy0)] * norm;
            for (long j = cx0; j <= cx1; ++j) row[j] += wy * gx[static_cast<std::size_t>(j - cx0)];
        }
    }
    return map;
}

/// Sums non-overlapping factor x factor blocks; the total is preserved.
inline DensityMap sum_pool(const DensityMap& map, std::size_t factor) {
    if (factor == 0 || map.height % factor != 0 || map.width % factor != 0)
        throw ShapeError("sum_pool: " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                         " not divisible by " + std::to_string(factor));
    DensityMap out(map.height / factor, map.width / factor,
                   map.scale_divisor * static_cast<std::uint32_t>(factor));
    for (std::size_t y = 0; y < map.height; ++y)
        for (std::size_t x = 0; x < map.width; ++x) out.at(y / factor, x / factor) += map.at(y, x);
    return out;
}

/// Targets for the four prediction scales, finest first: /4, /8, /16, /32.
struct TargetPyramid {
    std::array<DensityMap, 4> levels;

    const DensityMap& at_divisor(std::uint32_t divisor) const {
        for (const auto& l : levels)
            if (l.scale_divisor == divisor) return l;
        throw UsageError("no pyramid level at divisor " + std::to_string(divisor));
    }
};

inline constexpr std::array<std::uint32_t, 4> kPyramidDivisors{4, 8, 16, 32};

/// Each level is sum-pooled directly from the full-resolution map.
inline TargetPyramid target_pyramid(const DensityMap& full) {
    if (full.scale_divisor != 1) throw UsageError("target_pyramid: expects a full-resolution map");
    if (full.height % 32 != 0 || full.width % 32 != 0)
        throw ShapeError("target_pyramid: extents must be multiples of 32");
    TargetPyramid p;
    for (std::size_t i = 0; i < 4; ++i) p.levels[i] = sum_pool(full, kPyramidDivisors[i]);
    return p;
}

/// Sub-window [y, y + h) x [x, x + w).
inline DensityMap crop(const DensityMap& map, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    if (y + h > map.height || x + w > map.width) throw ShapeError("crop window exceeds density map");
    DensityMap out(h, w, map.scale_divisor);
    for (std::size_t i = 0; i < h; ++i)
        std::copy_n(map.values.begin() + static_cast<std::ptrdiff_t>((y + i) * map.width + x), w,
                    out.values.begin() + static_cast<std::ptrdiff_t>(i * w));
    return out;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace detail

/// "DMAP", u32 height, u32 width, u32 scale_divisor, then row-major f32; all little-endian.
inline std::string encode_density(const DensityMap& map) {
    std::string out = "DMAP";
    detail::put_u32(out, static_cast<std::uint32_t>(map.height));
    detail::put_u32(out, static_cast<std::uint32_t>(map.width));
    detail::put_u32(out, map.scale_divisor);
    out.reserve(16 + 4 * map.values.size());
    for (double v : map.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

inline DensityMap decode_density(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "DMAP") != 0) throw CorruptionError("not a DMAP density map");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    DensityMap map(detail::get_u32(p + 4), detail::get_u32(p + 8), detail::get_u32(p + 12));
    if (bytes.size() != 16 + 4 * map.values.size()) throw CorruptionError("DMAP payload size mismatch");
    for (std::size_t i = 0; i < map.values.size(); ++i)
        map.values[i] = std::bit_cast<float>(detail::get_u32(p + 16 + 4 * i));
    return map;
}

inline void save_density(const DensityMap& map, const std::filesystem::path& path) {
    detail::write_file(path, encode_density(map));
}

inline DensityMap load_density(const std::filesystem::path& path) { return decode_density(detail::read_file(path)); }

/// 8-bit binary PGM, max-normalized, for eyeballing.
inline void save_density_pgm(const DensityMap& map, const std::filesystem::path& path) {
    const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
    std::string out = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
    for (double v : map.values) {
        const double s = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
    }
    detail::write_file(path, out);
}

} // namespace cgdrcn
