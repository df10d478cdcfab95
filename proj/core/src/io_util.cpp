// SPDX-License-Identifier: Apache-2.0

#include "skald/io_util.hpp"

#include <cstdio>
#include <fstream>

namespace skald {

std::vector<uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  in.seekg(0, std::ios::end);
  auto n = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(size_t(n), 0);
  if (n > 0) in.read(reinterpret_cast<char *>(buf.data()), n);
  if (!in) throw DataError("read failed: " + path.string());
  return buf;
}

void atomic_write_file(const std::filesystem::path &path, const void *data, size_t n) {
  namespace fs = std::filesystem;
  fs::path dir = path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out.write(static_cast<const char *>(data), std::streamsize(n));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("rename failed: " + path.string() + ": " + ec.message());
  }
}

} // namespace skald
