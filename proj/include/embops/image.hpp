// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace embops {

/// 8-bit interleaved raster (1 = gray/mask, 3 = RGB, 4 = RGBA).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    static Image filled(int w, int h, int channels, std::uint8_t value);

    [[nodiscard]] bool empty() const noexcept { return pixels.empty(); }
    [[nodiscard]] std::size_t index(int x, int y) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels);
    }
    std::uint8_t* at(int x, int y) { return pixels.data() + index(x, y); }
    [[nodiscard]] const std::uint8_t* at(int x, int y) const { return pixels.data() + index(x, y); }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Axis-aligned box, half-open pixel coordinates [x0,x1) x [y0,y1).
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;
    double score = 1.0;

    [[nodiscard]] int width() const noexcept { return x1 - x0; }
    [[nodiscard]] int height() const noexcept { return y1 - y0; }
    [[nodiscard]] long area() const noexcept { return static_cast<long>(width()) * height(); }
    [[nodiscard]] bool valid() const noexcept { return x1 > x0 && y1 > y0; }
    /// `inner` lies strictly inside this box (no shared edge).
    [[nodiscard]] bool strictly_contains(const Box& inner) const noexcept {
        return inner.x0 > x0 && inner.y0 > y0 && inner.x1 < x1 && inner.y1 < y1;
    }
};

double intersection_over_union(const Box& a, const Box& b);

std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);
Image decode_jpeg(std::span<const std::uint8_t> bytes);

/// PNG or JPEG by signature.
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

Image crop(const Image& image, const Box& box);
Image to_rgb(const Image& image);
/// Number of nonzero mask pixels.
long mask_area(const Image& mask);

}  // namespace embops
