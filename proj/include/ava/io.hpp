#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ava/errors.hpp"

namespace ava {

/// Row-major float matrix, the on-disk unit for all extracted features.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;  // rows * cols

    float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

namespace detail {

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
    if (std::size_t(is.gcount()) != sizeof(T)) throw TruncatedFile("unexpected end of file");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

// ---- AFF1 feature files ----
// magic "AFF1", u32 LE rows, u32 LE cols, then rows*cols f32 LE row-major.

inline void write_aff1(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("AFF1", 4);
    detail::write_le<std::uint32_t>(os, std::uint32_t(m.rows));
    detail::write_le<std::uint32_t>(os, std::uint32_t(m.cols));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(m.values.data()),
             std::streamsize(m.values.size() * sizeof(float)));
    if (!os) throw IoError("write failed: " + path.string());
}

inline Matrix read_aff1(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "AFF1", 4) != 0)
        throw BadMagic("not an AFF1 file: " + path.string());
    std::uint32_t rows = detail::read_le<std::uint32_t>(is);
    std::uint32_t cols = detail::read_le<std::uint32_t>(is);
    std::uint64_t count = std::uint64_t(rows) * cols;
    if (count > (std::uint64_t(1) << 31))
        throw DimOverflow("AFF1 dimensions too large: " + path.string());
    Matrix m;
    m.rows = rows;
    m.cols = cols;
    m.values.resize(std::size_t(count));
    is.read(reinterpret_cast<char*>(m.values.data()),
            std::streamsize(m.values.size() * sizeof(float)));
    if (std::size_t(is.gcount()) != m.values.size() * sizeof(float))
        throw TruncatedFile("AFF1 payload shorter than declared: " + path.string());
    return m;
}

// ---- AFWT weight checkpoints ----
// magic "AFWT", u16 LE version, then per-parameter records:
// u16 name length, name bytes, u8 rank, rank x u32 LE dims, f64 LE values.

struct ParamRecord {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<double> values;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void write_checkpoint(const std::filesystem::path& path,
                             const std::vector<ParamRecord>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("AFWT", 4);
    detail::write_le<std::uint16_t>(os, kCheckpointVersion);
    for (const ParamRecord& p : params) {
        detail::write_le<std::uint16_t>(os, std::uint16_t(p.name.size()));
        os.write(p.name.data(), std::streamsize(p.name.size()));
        detail::write_le<std::uint8_t>(os, std::uint8_t(p.dims.size()));
        for (std::size_t d : p.dims) detail::write_le<std::uint32_t>(os, std::uint32_t(d));
        for (double v : p.values) detail::write_le<double>(os, v);
    }
    if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<ParamRecord> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "AFWT", 4) != 0)
        throw BadMagic("not an AFWT checkpoint: " + path.string());
    std::uint16_t version = detail::read_le<std::uint16_t>(is);
    if (version != kCheckpointVersion)
        throw CheckpointMismatch("unsupported checkpoint version " + std::to_string(version));
    std::vector<ParamRecord> params;
    while (true) {
        is.peek();
        if (is.eof()) break;
        ParamRecord p;
        std::uint16_t nlen = detail::read_le<std::uint16_t>(is);
        p.name.resize(nlen);
        is.read(p.name.data(), nlen);
        if (is.gcount() != nlen) throw TruncatedFile("truncated parameter name");
        std::uint8_t rank = detail::read_le<std::uint8_t>(is);
        std::uint64_t count = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            std::uint32_t d = detail::read_le<std::uint32_t>(is);
            p.dims.push_back(d);
            count *= d;
            if (count > (std::uint64_t(1) << 31)) throw DimOverflow("parameter too large: " + p.name);
        }
        p.values.resize(std::size_t(count));
        for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = detail::read_le<double>(is);
        params.push_back(std::move(p));
    }
    return params;
}

// ---- CSV helpers ----

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace ava
