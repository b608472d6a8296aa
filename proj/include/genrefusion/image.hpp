#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "genrefusion/errors.hpp"
#include "genrefusion/tensor.hpp"

namespace genrefusion {

// Interleaved RGB pixel grid. Values live in [0, 255]; kept as doubles so
// resampling results stay exact for verification.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> rgb;  // height * width * 3

    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return rgb[(y * width + x) * 3 + c];
    }
    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return rgb[(y * width + x) * 3 + c];
    }

    static Image blank(std::size_t h, std::size_t w, double value = 0.0) {
        Image img;
        img.height = h;
        img.width = w;
        img.rgb.assign(h * w * 3, value);
        return img;
    }
};

namespace detail {

struct FileHandle {
    std::FILE* f = nullptr;
    explicit FileHandle(const std::filesystem::path& path) {
        f = std::fopen(path.string().c_str(), "rb");
    }
    ~FileHandle() {
        if (f) std::fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

inline Image decode_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path.string());
    auto next_field = [&]() -> std::string {
        std::string field;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                while (in.get(c) && c != '\n') {
                }
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!field.empty()) break;
                continue;
            }
            field.push_back(c);
        }
        return field;
    };
    if (next_field() != "P6") throw FormatError("not a P6 pixmap: " + path.string());
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoull(next_field());
        h = std::stoull(next_field());
        maxval = std::stoull(next_field());
    } catch (const std::exception&) {
        throw FormatError("malformed pixmap header: " + path.string());
    }
    if (w == 0 || h == 0 || maxval != 255) {
        throw FormatError("unsupported pixmap dimensions/maxval: " + path.string());
    }
    std::vector<unsigned char> raw(w * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw FormatError("truncated pixmap data: " + path.string());
    }
    Image img = Image::blank(h, w);
    for (std::size_t i = 0; i < raw.size(); ++i) img.rgb[i] = static_cast<double>(raw[i]);
    return img;
}

inline Image decode_png(const std::filesystem::path& path) {
    FileHandle fh(path);
    if (!fh.f) throw IoError("cannot open image: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng initialization failed");
    }
    std::vector<unsigned char> pixels;
    std::vector<png_bytep> rows;
    std::size_t w = 0, h = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("undecodable PNG: " + path.string());
    }
    png_init_io(png, fh.f);
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    // Normalize every variant to 8-bit RGB: expand palettes/gray, drop alpha.
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != w * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unexpected PNG row layout: " + path.string());
    }
    pixels.resize(w * h * 3);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    Image img = Image::blank(h, w);
    for (std::size_t i = 0; i < pixels.size(); ++i) img.rgb[i] = static_cast<double>(pixels[i]);
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(mgr->jump, 1);
}

inline Image decode_jpeg(const std::filesystem::path& path) {
    FileHandle fh(path);
    if (!fh.f) throw IoError("cannot open image: " + path.string());
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw FormatError("undecodable JPEG: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fh.f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const std::size_t w = cinfo.output_width, h = cinfo.output_height;
    std::vector<unsigned char> row(w * 3);
    Image img = Image::blank(h, w);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* rowptr = row.data();
        jpeg_read_scanlines(&cinfo, &rowptr, 1);
        const std::size_t y = cinfo.output_scanline - 1;
        for (std::size_t i = 0; i < w * 3; ++i) {
            img.rgb[y * w * 3 + i] = static_cast<double>(row[i]);
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

}  // namespace detail

// Decodes PNG, JPEG, or P6 pixmap by magic bytes. Grayscale is promoted to
// three channels and alpha is dropped.
inline Image load_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open image: " + path.string());
    unsigned char magic[2] = {0, 0};
    probe.read(reinterpret_cast<char*>(magic), 2);
    probe.close();
    if (magic[0] == 0x89 && magic[1] == 'P') return detail::decode_png(path);
    if (magic[0] == 0xFF && magic[1] == 0xD8) return detail::decode_jpeg(path);
    if (magic[0] == 'P' && magic[1] == '6') return detail::decode_ppm(path);
    throw FormatError("unrecognized image format: " + path.string());
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.rgb.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.rgb[i], 0.0, 255.0)));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("cannot write image: " + path.string());
}

// Bilinear resampling with half-pixel-center alignment:
//   src = (dst + 0.5) * (size_src / size_dst) - 0.5, clamped at the borders.
// Sampling a grid at its own size reproduces it exactly.
inline Image resize_bilinear(const Image& src, std::size_t target_h, std::size_t target_w) {
    if (target_h == 0 || target_w == 0) {
        throw ContractError("resize: target dimensions must be positive");
    }
    if (src.height == 0 || src.width == 0 || src.rgb.empty()) {
        throw ContractError("resize: empty source image");
    }
    Image dst = Image::blank(target_h, target_w);
    const double sy = static_cast<double>(src.height) / static_cast<double>(target_h);
    const double sx = static_cast<double>(src.width) / static_cast<double>(target_w);
    for (std::size_t y = 0; y < target_h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < target_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double tx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = src.at(y0, x0, c) * (1.0 - tx) + src.at(y0, x1, c) * tx;
                const double bot = src.at(y1, x0, c) * (1.0 - tx) + src.at(y1, x1, c) * tx;
                dst.at(y, x, c) = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    return dst;
}

// Channel-planar [3xHxW] tensor scaled into [0,1].
inline Tensor normalize(const Image& img) {
    Tensor t = Tensor::zeros({3, img.height, img.width});
    double* out = t.data();
    const std::size_t plane = img.height * img.width;
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                out[c * plane + y * img.width + x] = img.at(y, x, c) / 255.0;
            }
        }
    }
    detail::check_finite(t.values(), "normalize");
    return t;
}

// Full preprocessing: decode, square resize, scale to [0,1].
inline Tensor load_image_tensor(const std::filesystem::path& path, std::size_t target_size) {
    Image img = load_image(path);
    if (img.height != target_size || img.width != target_size) {
        img = resize_bilinear(img, target_size, target_size);
    }
    return normalize(img);
}

}  // namespace genrefusion
