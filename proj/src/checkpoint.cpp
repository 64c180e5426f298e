#include "iag/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "iag/common.hpp"

namespace iag {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    char b[4] = {(char)(v & 0xff), (char)((v >> 8) & 0xff), (char)((v >> 16) & 0xff),
                 (char)((v >> 24) & 0xff)};
    buf.append(b, 4);
}

uint32_t get_u32(const std::string& buf, size_t& pos) {
    if (pos + 4 > buf.size()) throw runtime_fault("checkpoint: truncated file");
    uint32_t v = (uint8_t)buf[pos] | ((uint32_t)(uint8_t)buf[pos + 1] << 8) |
                 ((uint32_t)(uint8_t)buf[pos + 2] << 16) | ((uint32_t)(uint8_t)buf[pos + 3] << 24);
    pos += 4;
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensorF>& tensors) {
    std::string buf;
    buf.append("IAG1", 4);
    for (const auto& t : tensors) {
        put_u32(buf, (uint32_t)t.name.size());
        buf.append(t.name);
        put_u32(buf, (uint32_t)t.shape.size());
        for (int d : t.shape) put_u32(buf, (uint32_t)d);
        for (float f : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(buf, bits);
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw runtime_fault("checkpoint: cannot open for write: " + path);
    os.write(buf.data(), (std::streamsize)buf.size());
    if (!os) throw runtime_fault("checkpoint: write failed: " + path);
}

std::vector<NamedTensorF> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw runtime_fault("checkpoint: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 || buf.compare(0, 4, "IAG1") != 0)
        throw runtime_fault("checkpoint: bad magic in " + path);
    size_t pos = 4;
    std::vector<NamedTensorF> out;
    while (pos < buf.size()) {
        NamedTensorF t;
        uint32_t nlen = get_u32(buf, pos);
        if (pos + nlen > buf.size()) throw runtime_fault("checkpoint: truncated name");
        t.name = buf.substr(pos, nlen);
        pos += nlen;
        uint32_t rank = get_u32(buf, pos);
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d = get_u32(buf, pos);
            t.shape.push_back((int)d);
            numel *= (int64_t)d;
        }
        t.data.resize((size_t)numel);
        for (int64_t i = 0; i < numel; ++i) {
            uint32_t bits = get_u32(buf, pos);
            float f;
            std::memcpy(&f, &bits, 4);
            t.data[(size_t)i] = f;
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace iag
