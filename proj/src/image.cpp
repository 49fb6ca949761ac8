#include <stylekernel/image.hpp>

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace sk {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
    throw std::runtime_error(std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

ImageU8 load_png_file(std::FILE* f, const std::string& path) {
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    check(png != nullptr, "png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail("png: allocation failed");
    }
    try {
        png_init_io(png, f);
        png_read_info(png, info);

        // Normalize whatever arrived to 8-bit RGB.
        png_set_expand(png);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
            png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        png_read_update_info(png, info);

        check(png_get_channels(png, info) == 3, "png: could not normalize " + path + " to RGB");
        ImageU8 img;
        img.width = static_cast<int>(png_get_image_width(png, info));
        img.height = static_cast<int>(png_get_image_height(png, info));
        img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
        std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
        for (int y = 0; y < img.height; ++y)
            rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
        png_destroy_read_struct(&png, &info, nullptr);
        return img;
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
}

ImageU8 load_ppm_file(std::ifstream& in, const std::string& path) {
    std::string magic;
    in >> magic;
    check(magic == "P6", "ppm: " + path + " is not a binary P6 file");
    auto next_token = [&in]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        fail("ppm: truncated header");
    };
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    check(w > 0 && h > 0, "ppm: bad extents in " + path);
    check(maxval == 255, "ppm: only maxval 255 supported, " + path + " has " +
                             std::to_string(maxval));
    in.get();  // single whitespace after maxval
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    check(in.gcount() == static_cast<std::streamsize>(img.rgb.size()),
          "ppm: truncated pixel data in " + path);
    return img;
}

}  // namespace

ImageU8 load_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    check(probe.good(), "cannot open image file " + path);
    unsigned char sig[8] = {0};
    probe.read(reinterpret_cast<char*>(sig), 8);
    probe.close();
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (std::memcmp(sig, png_sig, 8) == 0) {
        FilePtr f(std::fopen(path.c_str(), "rb"));
        check(f != nullptr, "cannot open image file " + path);
        return load_png_file(f.get(), path);
    }
    if (sig[0] == 'P' && sig[1] == '6') {
        std::ifstream in(path, std::ios::binary);
        return load_ppm_file(in, path);
    }
    fail("unsupported image format in " + path + " (need PNG or binary PPM)");
}

void save_png(const std::string& path, const ImageU8& img) {
    check(img.width > 0 && img.height > 0, "save_png: empty image");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    check(f != nullptr, "cannot write image file " + path);
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    check(png != nullptr, "png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail("png: allocation failed");
    }
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                     static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < img.height; ++y)
            png_write_row(png, const_cast<png_bytep>(img.rgb.data() +
                                                     static_cast<std::size_t>(y) * img.width * 3));
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
}

void save_ppm(const std::string& path, const ImageU8& img) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot write image file " + path);
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
    check(out.good(), "short write to " + path);
}

void save_image(const std::string& path, const ImageU8& img) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm")
        save_ppm(path, img);
    else
        save_png(path, img);
}

}  // namespace sk
