#include "comet/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace comet::io {

namespace {

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
        return r;
    }
    return v;
}

}  // namespace

void ByteWriter::u64(std::uint64_t v) {
    const std::uint64_t le = to_le(v);
    char raw[8];
    std::memcpy(raw, &le, 8);
    buffer_.append(raw, 8);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(const double* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) f64(data[i]);
}

void ByteWriter::matrix_row_major(const Matrix& m) {
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
}

std::string_view ByteReader::bytes(std::size_t count) {
    if (count > remaining()) throw FormatError("unexpected end of data");
    auto out = data_.substr(offset_, count);
    offset_ += count;
    return out;
}

std::uint64_t ByteReader::u64() {
    auto raw = bytes(8);
    std::uint64_t v = 0;
    std::memcpy(&v, raw.data(), 8);
    return to_le(v);
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

Matrix ByteReader::matrix_row_major(Index rows, Index cols) {
    if (rows < 0 || cols < 0) throw FormatError("negative matrix shape");
    if (static_cast<std::size_t>(rows * cols) * 8 > remaining()) throw FormatError("matrix payload truncated");
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = f64();
    }
    return m;
}

std::uint64_t checksum64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view data) {
    const std::filesystem::path target(path);
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp);
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, target);
}

}  // namespace comet::io
