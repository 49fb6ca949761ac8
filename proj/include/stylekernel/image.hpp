#pragma once

// 8-bit RGB image I/O (PNG via libpng, binary PPM as fallback) and the
// conversions between images and float feature maps.

#include <cstdint>
#include <string>
#include <vector>

#include <stylekernel/tensor.hpp>

namespace sk {

struct ImageU8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;  // height*width*3, row-major

    std::uint8_t& at(int y, int x, int c) {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

// Formats are sniffed from the file contents, not the extension.
ImageU8 load_image(const std::string& path);
void save_png(const std::string& path, const ImageU8& img);
void save_ppm(const std::string& path, const ImageU8& img);
// Picks PNG or PPM by extension (.ppm -> PPM, anything else PNG).
void save_image(const std::string& path, const ImageU8& img);

// [H, W, 3] map with values in [0, 1].
template <typename S>
TensorT<S> image_to_unit(const ImageU8& img) {
    std::vector<S> v(img.rgb.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(img.rgb[i]) / S(255);
    return TensorT<S>::from({img.height, img.width, 3}, std::move(v));
}

// [H, W, 3] map with values in [-1, 1].
template <typename S>
TensorT<S> image_to_signed(const ImageU8& img) {
    std::vector<S> v(img.rgb.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<S>(img.rgb[i]) / S(127.5) - S(1);
    return TensorT<S>::from({img.height, img.width, 3}, std::move(v));
}

// Maps a (-1, 1) tensor linearly to [0, 255] with round-half-away-from-zero.
// Out-of-range values are clamped and counted into *clamped when given.
template <typename S>
ImageU8 signed_to_image(const TensorT<S>& x, long* clamped = nullptr) {
    check(x.rank() == 3 && x.dim(2) == 3,
          "signed_to_image: expected [H,W,3], got " + shape_str(x.shape()));
    ImageU8 img;
    img.height = x.dim(0);
    img.width = x.dim(1);
    img.rgb.resize(x.data().size());
    long bad = 0;
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
        S v = x.data()[i];
        if (v < S(-1) || v > S(1)) {
            ++bad;
            v = std::clamp(v, S(-1), S(1));
        }
        const double mapped = std::round((static_cast<double>(v) + 1.0) * 127.5);
        img.rgb[i] = static_cast<std::uint8_t>(std::clamp(mapped, 0.0, 255.0));
    }
    if (clamped) *clamped += bad;
    return img;
}

}  // namespace sk
