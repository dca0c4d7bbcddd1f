#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "g2v/common.hpp"
#include "g2v/tensor.hpp"

namespace g2v {

// Interleaved 8-bit RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // height * width * 3, row-major

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}

    uint8_t* px(int x, int y) { return &rgb[(static_cast<size_t>(y) * width + x) * 3]; }
    const uint8_t* px(int x, int y) const {
        return &rgb[(static_cast<size_t>(y) * width + x) * 3];
    }

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        uint8_t* p = px(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }

    bool operator==(const Image& o) const {
        return width == o.width && height == o.height && rgb == o.rgb;
    }
};

// [1,H,W,3] tensor with channels scaled to [0,1].
inline num::Tensor<float> image_to_tensor(const Image& img) {
    num::Tensor<float> t({1, img.height, img.width, 3});
    const float inv = 1.0f / 255.0f;
    for (size_t i = 0; i < img.rgb.size(); ++i) t.data[i] = static_cast<float>(img.rgb[i]) * inv;
    return t;
}

// Batch of images as one [N,H,W,3] tensor.
inline num::Tensor<float> images_to_tensor(const std::vector<const Image*>& imgs) {
    require(!imgs.empty(), "images_to_tensor: empty batch");
    int h = imgs[0]->height, w = imgs[0]->width;
    num::Tensor<float> t({static_cast<int>(imgs.size()), h, w, 3});
    const float inv = 1.0f / 255.0f;
    size_t stride = static_cast<size_t>(h) * w * 3;
    for (size_t n = 0; n < imgs.size(); ++n) {
        require(imgs[n]->height == h && imgs[n]->width == w,
                "images_to_tensor: mismatched image dims in batch");
        for (size_t i = 0; i < stride; ++i)
            t.data[n * stride + i] = static_cast<float>(imgs[n]->rgb[i]) * inv;
    }
    return t;
}

inline void write_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open image for writing: ", path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    require(os.good(), "I/O failure while writing image: ", path);
}

// Grayscale export with per-map min-max normalization to the full 8-bit range.
inline void write_pgm_normalized(const std::vector<float>& values, int width, int height,
                                 const std::string& path) {
    require(static_cast<size_t>(width) * height == values.size(),
            "write_pgm_normalized: ", values.size(), " values for ", width, "x", height);
    float lo = values[0], hi = values[0];
    for (float v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open image for writing: ", path);
    os << "P5\n" << width << " " << height << "\n255\n";
    for (float v : values) {
        int g = static_cast<int>((v - lo) * scale + 0.5f);
        os.put(static_cast<char>(std::min(255, std::max(0, g))));
    }
    require(os.good(), "I/O failure while writing image: ", path);
}

}  // namespace g2v
