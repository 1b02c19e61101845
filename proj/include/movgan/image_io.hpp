#pragma once

#include <string>

#include "movgan/tensor.hpp"

namespace movgan {

// Binary PPM (P6), the lossless frame format used across the pipeline.
// Images are [3, H, W] with values in [-1, 1]; writing quantizes to 8-bit,
// reading maps back with x / 127.5 - 1.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

inline uint8_t to_byte(double v) {
    double x = (v + 1.0) * 127.5;
    if (x < 0.0) x = 0.0;
    if (x > 255.0) x = 255.0;
    return static_cast<uint8_t>(x + 0.5);
}

inline double from_byte(uint8_t b) { return b / 127.5 - 1.0; }

}  // namespace movgan
