#pragma once

// 8-bit binary PPM (P6) image I/O. Images elsewhere in the pipeline are
// (3,H,W) float tensors in [0,1]; quantization here is round-half-up.

#include <string>
#include <vector>

namespace iag {

struct ImageU8 {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // H*W*3, row-major interleaved
    bool operator==(const ImageU8&) const = default;
};

void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);

// (3,H,W) floats in [0,1] <-> interleaved 8-bit
ImageU8 to_u8(const std::vector<float>& chw, int width, int height);
std::vector<float> to_float(const ImageU8& img);

}  // namespace iag
