// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <string>

#include "cgdrcn/density.hpp"
#include "cgdrcn/errors.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

/// RGB image in [0, 1], channels-first [3, H, W].
using Image = Tensor<float>;

inline std::string encode_ppm(const Image& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("encode_ppm: expects [3,H,W]");
    const std::size_t h = img.dim(1), w = img.dim(2);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + 3 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
                out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
            }
    return out;
}

inline Image decode_ppm(const std::string& bytes) {
    std::size_t pos = 0;
    auto token = [&]() -> std::string {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (token() != "P6") throw CorruptionError("not a binary PPM (P6) image");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(token());
        h = std::stoul(token());
        maxval = std::stoul(token());
    } catch (const std::exception&) {
        throw CorruptionError("malformed PPM header");
    }
    if (maxval != 255) throw CorruptionError("only 8-bit PPM is supported");
    ++pos; // single whitespace after maxval
    if (bytes.size() < pos + 3 * w * h) throw CorruptionError("truncated PPM payload");
    Image img({3, h, w});
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(*p++) / 255.0f;
    return img;
}

inline void save_ppm(const Image& img, const std::filesystem::path& path) { detail::write_file(path, encode_ppm(img)); }
inline Image load_ppm(const std::filesystem::path& path) { return decode_ppm(detail::read_file(path)); }

} // namespace cgdrcn
