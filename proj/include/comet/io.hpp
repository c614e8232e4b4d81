#pragma once

#include "comet/types.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace comet::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

/// Append-only little-endian byte sink.
class ByteWriter {
public:
    void bytes(std::string_view raw) { buffer_.append(raw); }
    void u64(std::uint64_t v);
    void f64(double v);
    void f64s(const double* data, std::size_t count);
    void matrix_row_major(const Matrix& m);

    const std::string& buffer() const { return buffer_; }

private:
    std::string buffer_;
};

/// Bounds-checked little-endian reader; throws FormatError on overrun.
class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::string_view bytes(std::size_t count);
    std::uint64_t u64();
    double f64();
    Matrix matrix_row_major(Index rows, Index cols);

    std::size_t offset() const { return offset_; }
    std::size_t remaining() const { return data_.size() - offset_; }

private:
    std::string_view data_;
    std::size_t offset_ = 0;
};

/// FNV-1a over raw bytes, 64-bit.
std::uint64_t checksum64(std::string_view data);

std::string read_file(const std::string& path);
/// Writes via a temporary file and rename so readers never see a partial file.
void write_file_atomic(const std::string& path, std::string_view data);

}  // namespace comet::io
