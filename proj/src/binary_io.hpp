#pragma once

// Little-endian primitives shared by the PIAA and PIAC containers.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>

#include "piaa/error.hpp"

namespace piaa::io {

template <typename T>
T to_little(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open '" + path + "' for writing");
  }

  template <typename T>
  void put(T value) {
    value = to_little(value);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  template <typename T>
  void put_array(const T* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(data),
                 static_cast<std::streamsize>(n * sizeof(T)));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(data[i]);
    }
  }

  void put_bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

  void put_string(const std::string& s) {
    if (s.size() > UINT32_MAX) throw Error("string too long for container");
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  void finish() {
    out_.flush();
    if (!out_) throw Error("write failed for '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open '" + path + "'");
  }

  template <typename T>
  T get() {
    T value;
    read_raw(&value, sizeof(T));
    return to_little(value);
  }

  template <typename T>
  void get_array(T* data, std::size_t n) {
    read_raw(data, n * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < n; ++i) data[i] = to_little(data[i]);
    }
  }

  void get_bytes(void* data, std::size_t n) { read_raw(data, n); }

  std::string get_string(std::size_t limit = 1u << 26) {
    const auto n = get<std::uint32_t>();
    if (n > limit) throw Error("truncated payload: string length out of range in '" + path_ + "'");
    std::string s(n, '\0');
    read_raw(s.data(), n);
    return s;
  }

  bool at_end() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  void read_raw(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw Error("truncated payload in '" + path_ + "'");
    }
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace piaa::io
