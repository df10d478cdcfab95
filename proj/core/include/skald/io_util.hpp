// SPDX-License-Identifier: Apache-2.0
/**
 * @file   io_util.hpp
 * @brief  Little-endian binary readers/writers and atomic file output.
 */

#ifndef SKALD_IO_UTIL_HPP
#define SKALD_IO_UTIL_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "skald/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace skald {

/// Appends fixed-width little-endian values to an in-memory buffer.
class BinaryWriter {
public:
  template <class T> void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    size_t n = buf_.size();
    buf_.resize(n + sizeof(T));
    std::memcpy(buf_.data() + n, &v, sizeof(T));
  }

  void put_bytes(const void *p, size_t n) {
    size_t o = buf_.size();
    buf_.resize(o + n);
    std::memcpy(buf_.data() + o, p, n);
  }

  void put_magic(const char (&m)[5]) { put_bytes(m, 4); }

  void put_string(const std::string &s) {
    put<uint32_t>(uint32_t(s.size()));
    put_bytes(s.data(), s.size());
  }

  template <class T> void put_vec(const std::vector<T> &xs) {
    put_bytes(xs.data(), xs.size() * sizeof(T));
  }

  const std::vector<uint8_t> &bytes() const { return buf_; }

private:
  std::vector<uint8_t> buf_;
};

/// Reads fixed-width little-endian values; throws DataError on underrun.
class BinaryReader {
public:
  BinaryReader(const uint8_t *data, size_t n) : p_(data), n_(n) {}
  explicit BinaryReader(const std::vector<uint8_t> &b) : BinaryReader(b.data(), b.size()) {}

  template <class T> T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void get_bytes(void *out, size_t n) {
    need(n);
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }

  void expect_magic(const char (&m)[5], const std::string &what) {
    char got[4];
    get_bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      throw DataError(what + ": bad magic");
  }

  std::string get_string() {
    uint32_t n = get<uint32_t>();
    if (n > remaining()) throw DataError("truncated string");
    std::string s(reinterpret_cast<const char *>(p_ + pos_), n);
    pos_ += n;
    return s;
  }

  template <class T> std::vector<T> get_vec(size_t count) {
    std::vector<T> xs(count);
    get_bytes(xs.data(), count * sizeof(T));
    return xs;
  }

  size_t remaining() const { return n_ - pos_; }
  size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == n_; }

private:
  void need(size_t n) const {
    if (pos_ + n > n_) throw DataError("unexpected end of data");
  }

  const uint8_t *p_;
  size_t n_;
  size_t pos_ = 0;
};

/// Reads a whole file; throws DataError if it cannot be opened.
std::vector<uint8_t> read_file(const std::filesystem::path &path);

/// Writes bytes through a temp file in the same directory, then renames.
void atomic_write_file(const std::filesystem::path &path, const void *data, size_t n);

inline void atomic_write_file(const std::filesystem::path &path, const std::vector<uint8_t> &b) {
  atomic_write_file(path, b.data(), b.size());
}

inline void atomic_write_file(const std::filesystem::path &path, const std::string &s) {
  atomic_write_file(path, s.data(), s.size());
}

} // namespace skald

#endif // SKALD_IO_UTIL_HPP
