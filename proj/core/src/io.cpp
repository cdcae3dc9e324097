#include "fdwm/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

namespace fdwm {

namespace {
template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw DataError("unexpected end of file");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}
}  // namespace

void write_u16(std::ostream& os, uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, uint64_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, v); }

void write_f32s(std::ostream& os, const float* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
}

void write_u16s(std::ostream& os, const uint16_t* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(uint16_t)));
}

uint16_t read_u16(std::istream& is) { return read_le<uint16_t>(is); }
uint32_t read_u32(std::istream& is) { return read_le<uint32_t>(is); }
uint64_t read_u64(std::istream& is) { return read_le<uint64_t>(is); }
float read_f32(std::istream& is) { return read_le<float>(is); }

void read_f32s(std::istream& is, float* p, size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw DataError("unexpected end of file");
}

void read_u16s(std::istream& is, uint16_t* p, size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(uint16_t)));
    if (!is) throw DataError("unexpected end of file");
}

uint32_t crc32_bytes(const void* data, size_t n, uint32_t seed) {
    return static_cast<uint32_t>(
        ::crc32(seed, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

uint32_t crc32_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open file for checksum: " + path);
    uint32_t crc = static_cast<uint32_t>(::crc32(0L, Z_NULL, 0));
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize got = f.gcount();
        if (got > 0) crc = crc32_bytes(buf, static_cast<size_t>(got), crc);
    }
    return crc;
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_ppm(const std::string& path, const std::vector<float>& rgb, int h, int w) {
    if (rgb.size() != static_cast<size_t>(h) * w * 3)
        throw std::invalid_argument("write_ppm: extent mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(rgb.size());
    for (size_t i = 0; i < rgb.size(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, rgb[i]));
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("short write: " + path);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw DataError("cannot create directory " + path + ": " + ec.message());
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void write_run_info(const std::string& out_dir, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& fields) {
    ensure_dir(out_dir);
    std::ofstream f(out_dir + "/run_info.txt");
    if (!f) throw DataError("cannot write run info in " + out_dir);
    f << "command: " << command << "\n";
    for (const auto& [k, v] : fields) f << k << ": " << v << "\n";
}

}  // namespace fdwm
