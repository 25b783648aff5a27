/**
 * Copyright 2026 The pxcnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PXCNN_ERROR_HPP_
#define PXCNN_ERROR_HPP_

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pxcnn {

/// Broad failure category. The CLI maps each kind onto a stable exit code.
enum class ErrorKind {
  invalid_argument,  // contract violation by the caller (shapes, ranges)
  data,              // dataset layout, image decoding, malformed input files
  training,          // non-finite loss, spatial collapse at build time
  checkpoint,        // bad magic, truncated or inconsistent checkpoint
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

[[noreturn]] inline void fail_argument(const std::string& what) {
  throw Error(ErrorKind::invalid_argument, what);
}

}  // namespace pxcnn

#endif  // PXCNN_ERROR_HPP_
