// include/pbmsv/binary-io.h

// Copyright 2026  The pbmsv Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Little-endian binary serialization shared by every on-disk format, plus
// whole-file helpers and content hashing.

#ifndef PBMSV_BINARY_IO_H_
#define PBMSV_BINARY_IO_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "pbmsv/types.h"

namespace pbmsv {

class BinaryWriter {
 public:
  void Magic(std::string_view tag) { buf_.append(tag); }
  void U16(uint16_t v) { Put(v); }
  void I16(int16_t v) { Put(v); }
  void U32(uint32_t v) { Put(v); }
  void U64(uint64_t v) { Put(v); }
  void F32(float v) { Put(v); }
  void F64(double v) { Put(v); }
  void Str(std::string_view s) {
    U32(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void Vec(const Vector &v);
  // Row-major payload.
  void Mat(const Matrix &m);

  const std::string &bytes() const { return buf_; }
  std::string Take() { return std::move(buf_); }

 private:
  template <class T>
  void Put(T v) {
    static_assert(std::endian::native == std::endian::little);
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.append(raw, sizeof(T));
  }
  std::string buf_;
};

class BinaryReader {
 public:
  /// `what` names the format in error messages.
  BinaryReader(std::string_view data, std::string what)
      : data_(data), what_(std::move(what)) {}

  void ExpectMagic(std::string_view tag);
  uint32_t U32() { return Get<uint32_t>(); }
  uint64_t U64() { return Get<uint64_t>(); }
  float F32() { return Get<float>(); }
  double F64() { return Get<double>(); }
  std::string Str();
  Vector Vec(long n);
  Matrix Mat(long rows, long cols);

  bool AtEnd() const { return pos_ == data_.size(); }
  void ExpectEnd();
  // Fails unless at least `n` bytes remain; guards allocations from
  // corrupted size fields.
  void Need(size_t n);

 private:
  template <class T>
  T Get() {
    Need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view data_;
  size_t pos_ = 0;
  std::string what_;
};

std::string ReadFile(const std::string &path);

/// Writes to a temporary sibling and renames it into place, so readers never
/// observe a partially written file.
void WriteFileAtomic(const std::string &path, std::string_view bytes);

/// Lower-case hex SHA-256 of `bytes`.
std::string Sha256Hex(std::string_view bytes);

}  // namespace pbmsv

#endif  // PBMSV_BINARY_IO_H_
