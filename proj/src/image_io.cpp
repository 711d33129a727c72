#include "texstat/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <memory>

namespace texstat {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

ImageU8 read_png_file(std::FILE* fp, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng init failed for " + path);
    }
    std::vector<unsigned char> data;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode PNG: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.height = static_cast<std::int64_t>(png_get_image_height(png, info));
    img.width = static_cast<std::int64_t>(png_get_image_width(png, info));
    img.channels = static_cast<std::int64_t>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unsupported PNG channel count in " + path);
    }
    data.resize(static_cast<std::size_t>(img.height * img.width * img.channels));
    rows.resize(static_cast<std::size_t>(img.height));
    for (std::int64_t y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = data.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    img.pixels = std::move(data);
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

ImageU8 read_jpeg_file(std::FILE* fp, const std::string& path) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("failed to decode JPEG: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 img;
    img.height = static_cast<std::int64_t>(cinfo.output_height);
    img.width = static_cast<std::int64_t>(cinfo.output_width);
    img.channels = static_cast<std::int64_t>(cinfo.output_components);
    img.pixels.resize(static_cast<std::size_t>(img.height * img.width * img.channels));
    const std::int64_t stride = img.width * img.channels;
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = img.pixels.data() + cinfo.output_scanline * stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    if (img.channels != 1 && img.channels != 3)
        throw DataError("unsupported JPEG channel count in " + path);
    return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open image: " + path);
    unsigned char magic[4] = {0, 0, 0, 0};
    const std::size_t got = std::fread(magic, 1, 4, fp.get());
    std::rewind(fp.get());
    if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G')
        return read_png_file(fp.get(), path);
    if (got >= 2 && magic[0] == 0xff && magic[1] == 0xd8) return read_jpeg_file(fp.get(), path);
    throw DataError("unrecognized image format (expected PNG or JPEG): " + path);
}

ImageU8 to_rgb(const ImageU8& img, const std::string& context) {
    if (img.channels == 3) return img;
    std::cerr << "note: " << context << " is grayscale; replicating to RGB\n";
    ImageU8 out;
    out.height = img.height;
    out.width = img.width;
    out.channels = 3;
    out.pixels.resize(static_cast<std::size_t>(img.height * img.width * 3));
    for (std::int64_t i = 0; i < img.height * img.width; ++i) {
        const unsigned char v = img.pixels[static_cast<std::size_t>(i)];
        out.pixels[static_cast<std::size_t>(3 * i + 0)] = v;
        out.pixels[static_cast<std::size_t>(3 * i + 1)] = v;
        out.pixels[static_cast<std::size_t>(3 * i + 2)] = v;
    }
    return out;
}

ImageU8 to_gray(const ImageU8& img, const std::string& context) {
    if (img.channels == 1) return img;
    std::cerr << "note: " << context << " is RGB; converting to grayscale by luma\n";
    ImageU8 out;
    out.height = img.height;
    out.width = img.width;
    out.channels = 1;
    out.pixels.resize(static_cast<std::size_t>(img.height * img.width));
    for (std::int64_t i = 0; i < img.height * img.width; ++i) {
        const double r = img.pixels[static_cast<std::size_t>(3 * i + 0)];
        const double g = img.pixels[static_cast<std::size_t>(3 * i + 1)];
        const double b = img.pixels[static_cast<std::size_t>(3 * i + 2)];
        out.pixels[static_cast<std::size_t>(i)] =
            static_cast<unsigned char>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
    }
    return out;
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("write_png supports 1 or 3 channels");
    if (img.pixels.size() != static_cast<std::size_t>(img.height * img.width * img.channels))
        throw DataError("write_png: pixel buffer does not match dimensions");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    const std::int64_t stride = img.width * img.channels;
    for (std::int64_t y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + y * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace texstat
