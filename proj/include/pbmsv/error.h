// include/pbmsv/error.h

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

#ifndef PBMSV_ERROR_H_
#define PBMSV_ERROR_H_

#include <iostream>
#include <stdexcept>
#include <string>

namespace pbmsv {

/// Bad input: malformed files, inconsistent dimensions, empty data.
/// The command-line tool maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string &what)
      : std::runtime_error(what) {}
};

/// Training or scoring produced a non-finite or otherwise unusable result.
/// The command-line tool maps this to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string &what)
      : std::runtime_error(what) {}
};

inline void Require(bool cond, const std::string &msg) {
  if (!cond) throw ValidationError(msg);
}

inline void Warn(const std::string &msg) {
  std::cerr << "WARNING: " << msg << '\n';
}

}  // namespace pbmsv

#endif  // PBMSV_ERROR_H_
