#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ocpl {

/// Reads a whole file in binary mode. Throws IoError when the file cannot be
/// opened or read.
std::string read_file(const std::string& path);

/// Writes bytes to a sibling temp file and renames it over `path`, so readers
/// never observe a partially written file. Throws IoError on failure.
void atomic_write_file(const std::string& path, std::string_view bytes);

/// Shortest-round-trip decimal rendering of a double (printf %.17g).
std::string format_g17(double v);

// Little-endian primitive append helpers for binary payloads.
void put_u8(std::string& out, std::uint8_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);

// Cursor over a binary payload. Reads throw IoError naming the current
// section when the buffer runs out, so a truncated file reports where it
// broke off.
class ByteReader {
  public:
    explicit ByteReader(std::string_view buf) : buf_(buf) {}

    void set_section(std::string name) { section_ = std::move(name); }
    const std::string& section() const { return section_; }

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string_view bytes(std::size_t n);

    std::size_t remaining() const { return buf_.size() - pos_; }

  private:
    void need(std::size_t n) const;

    std::string_view buf_;
    std::size_t pos_ = 0;
    std::string section_ = "header";
};

}  // namespace ocpl
