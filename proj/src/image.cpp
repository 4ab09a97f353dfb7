// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/image.hpp"

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "embops/bytes.hpp"
#include "embops/error.hpp"

namespace embops {

Image Image::filled(int w, int h, int channels, std::uint8_t value) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = channels;
    img.pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(channels),
                      value);
    return img;
}

double intersection_over_union(const Box& a, const Box& b) {
    const int ix0 = std::max(a.x0, b.x0);
    const int iy0 = std::max(a.y0, b.y0);
    const int ix1 = std::min(a.x1, b.x1);
    const int iy1 = std::min(a.y1, b.y1);
    if (ix1 <= ix0 || iy1 <= iy0) return 0.0;
    const double inter = static_cast<double>(ix1 - ix0) * (iy1 - iy0);
    return inter / (static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter);
}

namespace {

int png_color_type(int channels) {
    switch (channels) {
        case 1: return PNG_COLOR_TYPE_GRAY;
        case 3: return PNG_COLOR_TYPE_RGB;
        case 4: return PNG_COLOR_TYPE_RGBA;
        default: fail(ErrorKind::invalid_argument, "unsupported channel count " + std::to_string(channels));
    }
}

void check_image(const Image& image) {
    if (image.width <= 0 || image.height <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height) *
                                   static_cast<std::size_t>(image.channels)) {
        fail(ErrorKind::invalid_argument, "malformed image buffer");
    }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
    check_image(image);
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 1 ? PNG_FORMAT_GRAY : image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA;
    (void)png_color_type(image.channels);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
        fail(ErrorKind::format, std::string("png encode failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
        fail(ErrorKind::format, std::string("png encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        fail(ErrorKind::format, std::string("png decode failed: ") + img.message);
    }
    Image out;
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    if (gray && !alpha) {
        img.format = PNG_FORMAT_GRAY;
        out.channels = 1;
    } else if (alpha) {
        img.format = PNG_FORMAT_RGBA;
        out.channels = 4;
    } else {
        img.format = PNG_FORMAT_RGB;
        out.channels = 3;
    }
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        fail(ErrorKind::format, std::string("png decode failed: ") + img.message);
    }
    return out;
}

namespace {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

}  // namespace

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    Image out;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        fail(ErrorKind::format, std::string("jpeg decode failed: ") + jerr.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.channels = static_cast<int>(cinfo.output_components);
    out.pixels.resize(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height) *
                      static_cast<std::size_t>(out.channels));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) *
                                               static_cast<std::size_t>(out.width) *
                                               static_cast<std::size_t>(out.channels);
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

Image read_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
        return decode_png(bytes);
    }
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
        return decode_jpeg(bytes);
    }
    fail(ErrorKind::format, "unrecognised image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& image) { write_file_bytes(path, encode_png(image)); }

Image crop(const Image& image, const Box& box) {
    check_image(image);
    const Box b{std::clamp(box.x0, 0, image.width), std::clamp(box.y0, 0, image.height),
                std::clamp(box.x1, 0, image.width), std::clamp(box.y1, 0, image.height), box.score};
    if (!b.valid()) {
        fail(ErrorKind::invalid_argument, "crop box outside image");
    }
    Image out = Image::filled(b.width(), b.height(), image.channels, 0);
    const auto row_bytes = static_cast<std::size_t>(b.width()) * static_cast<std::size_t>(image.channels);
    for (int y = 0; y < b.height(); ++y) {
        std::memcpy(out.at(0, y), image.at(b.x0, b.y0 + y), row_bytes);
    }
    return out;
}

Image to_rgb(const Image& image) {
    if (image.channels == 3) return image;
    Image out = Image::filled(image.width, image.height, 3, 0);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const auto* src = image.at(x, y);
            auto* dst = out.at(x, y);
            if (image.channels == 1) {
                dst[0] = dst[1] = dst[2] = src[0];
            } else {
                std::memcpy(dst, src, 3);
            }
        }
    }
    return out;
}

long mask_area(const Image& mask) {
    long n = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y)[0] != 0) ++n;
        }
    }
    return n;
}

}  // namespace embops
