#include "iag/ppm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "iag/common.hpp"

namespace iag {

void write_ppm(const std::string& path, const ImageU8& img) {
    check(img.width > 0 && img.height > 0, "write_ppm: empty image");
    check((int)img.rgb.size() == img.width * img.height * 3, "write_ppm: pixel buffer size mismatch");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw runtime_fault("write_ppm: cannot open " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write((const char*)img.rgb.data(), (std::streamsize)img.rgb.size());
    if (!os) throw runtime_fault("write_ppm: write failed " + path);
}

ImageU8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw runtime_fault("read_ppm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw runtime_fault("read_ppm: not a P6 file: " + path);
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w <= 0 || h <= 0 || maxval != 255)
        throw runtime_fault("read_ppm: bad header in " + path);
    is.get();  // single whitespace after maxval
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize((size_t)w * h * 3);
    is.read((char*)img.rgb.data(), (std::streamsize)img.rgb.size());
    if (!is) throw runtime_fault("read_ppm: truncated pixel data in " + path);
    return img;
}

ImageU8 to_u8(const std::vector<float>& chw, int width, int height) {
    check((int)chw.size() == 3 * width * height, "to_u8: buffer size mismatch");
    ImageU8 img;
    img.width = width;
    img.height = height;
    img.rgb.resize((size_t)width * height * 3);
    size_t plane = (size_t)width * height;
    for (size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            float v = chw[(size_t)c * plane + i];
            v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
            img.rgb[i * 3 + (size_t)c] = (uint8_t)std::floor(v * 255.0f + 0.5f);
        }
    }
    return img;
}

std::vector<float> to_float(const ImageU8& img) {
    size_t plane = (size_t)img.width * img.height;
    std::vector<float> chw(plane * 3);
    for (size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) chw[(size_t)c * plane + i] = img.rgb[i * 3 + (size_t)c] / 255.0f;
    return chw;
}

}  // namespace iag
