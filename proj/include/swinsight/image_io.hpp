#pragma once

// 8-bit RGB image decode (PNG, JPEG) and PNG encode.

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace swinsight {

struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

namespace detail {

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw QuarantineError(path.string(), "file is missing or unreadable");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.empty()) throw QuarantineError(path.string(), "file is empty");
    return bytes;
}

inline RgbImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& label) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw QuarantineError(label, "png header: " + msg);
    }
    img.format = PNG_FORMAT_RGBA;  // alpha read and then dropped, never composited
    std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, rgba.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw QuarantineError(label, "png data: " + msg);
    }
    RgbImage out;
    out.width = img.width;
    out.height = img.height;
    out.pixels.resize(out.width * out.height * 3);
    for (std::size_t i = 0; i < out.width * out.height; ++i) {
        out.pixels[3 * i + 0] = rgba[4 * i + 0];
        out.pixels[3 * i + 1] = rgba[4 * i + 1];
        out.pixels[3 * i + 2] = rgba[4 * i + 2];
    }
    png_image_free(&img);
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Corrupt-data warnings (e.g. premature end of file) are fatal here: libjpeg
// would otherwise pad the image with gray and carry on.
inline void jpeg_emit_message(j_common_ptr cinfo, int level) {
    if (level < 0) jpeg_error_exit(cinfo);
}

// The setjmp frames below hold no C++ objects that change after setjmp.
inline bool jpeg_begin(jpeg_decompress_struct* cinfo, JpegErrorManager* err) {
    if (setjmp(err->jump)) return false;
    jpeg_read_header(cinfo, TRUE);
    cinfo->out_color_space = JCS_RGB;
    jpeg_start_decompress(cinfo);
    return true;
}

inline bool jpeg_read_pixels(jpeg_decompress_struct* cinfo, JpegErrorManager* err, std::uint8_t* dst) {
    if (setjmp(err->jump)) return false;
    const std::size_t stride = static_cast<std::size_t>(cinfo->output_width) * 3;
    while (cinfo->output_scanline < cinfo->output_height) {
        JSAMPROW row = dst + static_cast<std::size_t>(cinfo->output_scanline) * stride;
        jpeg_read_scanlines(cinfo, &row, 1);
    }
    jpeg_finish_decompress(cinfo);
    return true;
}

inline RgbImage decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& label) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    err.base.emit_message = jpeg_emit_message;
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    RgbImage out;
    bool ok = jpeg_begin(&cinfo, &err);
    if (ok) {
        out.width = cinfo.output_width;
        out.height = cinfo.output_height;
        out.pixels.resize(out.width * out.height * 3);
        ok = jpeg_read_pixels(&cinfo, &err, out.pixels.data());
    }
    jpeg_destroy_decompress(&cinfo);
    if (!ok) throw QuarantineError(label, std::string("jpeg: ") + err.message);
    return out;
}

}  // namespace detail

/// Decodes a PNG or JPEG (sniffed by signature) to 8-bit RGB. Grayscale is
/// replicated to three channels; alpha is discarded. Every failure is a
/// QuarantineError.
inline RgbImage read_rgb(const std::filesystem::path& path) {
    const auto bytes = detail::read_all(path);
    static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin())) return detail::decode_png(bytes, path.string());
    if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) return detail::decode_jpeg(bytes, path.string());
    throw QuarantineError(path.string(), "unrecognized image format");
}

/// Writes 8-bit RGB as PNG. Output bytes depend only on the pixels.
inline void write_png(const std::filesystem::path& path, const RgbImage& image) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw DataError("cannot write '" + path.string() + "': " + msg);
    }
}

/// [3, H, W] tensor of v / 255.
inline Tensor<double> to_tensor(const RgbImage& image) {
    Tensor<double> t({3, image.height, image.width});
    const std::size_t plane = image.height * image.width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = image.pixels[3 * i + c] / 255.0;
    }
    return t;
}

}  // namespace swinsight
