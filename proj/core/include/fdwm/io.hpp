#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdwm {

// Dataset / checkpoint problems map to CLI exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Little-endian binary IO. x86 hosts write natively; the byte order is part
// of the file formats regardless of host.
void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f32s(std::ostream& os, const float* p, size_t n);
void write_u16s(std::ostream& os, const uint16_t* p, size_t n);

uint16_t read_u16(std::istream& is);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
void read_f32s(std::istream& is, float* p, size_t n);
void read_u16s(std::istream& is, uint16_t* p, size_t n);

uint32_t crc32_bytes(const void* data, size_t n, uint32_t seed = 0);
uint32_t crc32_file(const std::string& path);

uint64_t fnv1a64(const std::string& s);

// binary P6 image, rgb in [0,1]
void write_ppm(const std::string& path, const std::vector<float>& rgb, int h, int w);

void ensure_dir(const std::string& path);
bool file_exists(const std::string& path);

// Reproducibility header: config, seeds and format versions for a CLI run.
// Deliberately timestamp-free so outputs stay bit-deterministic.
void write_run_info(const std::string& out_dir, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& fields);

}  // namespace fdwm
