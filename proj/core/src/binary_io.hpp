#pragma once

// Internal little-endian binary file helpers shared by the CTX1 and TNT1
// readers/writers. Reader errors carry the byte offset.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "newscap/errors.hpp"

namespace newscap {
namespace detail {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw ParseError("cannot open " + path + " for writing");
  }
  void magic(const char* m) { out_.write(m, 4); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out_.write(reinterpret_cast<const char*>(b), 4);
  }
  void f32(double v) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void done() {
    out_.flush();
    if (!out_) throw ParseError("write failed for " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class BinaryReader {
 public:
  BinaryReader(const std::string& path, const std::string& format) : path_(path), format_(format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(format_ + ": cannot open " + path);
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  std::size_t offset() const { return offset_; }
  void expect_magic(const char* m) {
    if (bytes_.size() < 4 || std::memcmp(bytes_.data(), m, 4) != 0) {
      throw ParseError(format_ + ": bad magic at byte 0 in " + path_);
    }
    offset_ = 4;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[offset_ + i])) << (8 * i);
    }
    offset_ += 4;
    return v;
  }
  double f32(const char* what) {
    std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(offset_, n);
    offset_ += n;
    return s;
  }
  void expect_end() {
    if (offset_ != bytes_.size()) {
      throw ParseError(format_ + ": " + std::to_string(bytes_.size() - offset_) +
                       " trailing bytes at byte offset " + std::to_string(offset_) + " in " +
                       path_);
    }
  }

 private:
  void need(std::size_t n, const char* what) {
    if (offset_ + n > bytes_.size()) {
      throw ParseError(format_ + ": truncated while reading " + std::string(what) +
                       " at byte offset " + std::to_string(offset_) + " in " + path_);
    }
  }
  std::string path_;
  std::string format_;
  std::string bytes_;
  std::size_t offset_ = 0;
};

}  // namespace detail
}  // namespace newscap
