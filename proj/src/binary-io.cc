// src/binary-io.cc

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

#include "pbmsv/binary-io.h"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "pbmsv/error.h"

namespace pbmsv {

void BinaryWriter::Vec(const Vector &v) {
  for (long i = 0; i < v.size(); ++i) F64(v(i));
}

void BinaryWriter::Mat(const Matrix &m) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) F64(m(r, c));
}

void BinaryReader::Need(size_t n) {
  if (data_.size() - pos_ < n)
    throw ValidationError(what_ + ": truncated data");
}

void BinaryReader::ExpectMagic(std::string_view tag) {
  Need(tag.size());
  if (data_.substr(pos_, tag.size()) != tag)
    throw ValidationError(what_ + ": bad magic (expected '" +
                          std::string(tag) + "')");
  pos_ += tag.size();
}

std::string BinaryReader::Str() {
  uint32_t n = U32();
  Need(n);
  std::string s(data_.substr(pos_, n));
  pos_ += n;
  return s;
}

Vector BinaryReader::Vec(long n) {
  Need(static_cast<size_t>(n) * sizeof(double));
  Vector v(n);
  for (long i = 0; i < n; ++i) v(i) = F64();
  return v;
}

Matrix BinaryReader::Mat(long rows, long cols) {
  Need(static_cast<size_t>(rows) * static_cast<size_t>(cols) * sizeof(double));
  Matrix m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = F64();
  return m;
}

void BinaryReader::ExpectEnd() {
  if (!AtEnd()) throw ValidationError(what_ + ": trailing bytes");
}

std::string ReadFile(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFileAtomic(const std::string &path, std::string_view bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::random_device rd;
  fs::path tmp = target;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string Sha256Hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(),
                 nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static const char *hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

}  // namespace pbmsv
