#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include "diratlas/error.hpp"
#include "diratlas/rng.hpp"
#include "diratlas/types.hpp"

namespace test {

// Fresh scratch directory per call under the system temp directory.
inline std::filesystem::path scratch(const std::string& name) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("diratlas_" + name + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline diratlas::RowMatrix gaussian(diratlas::Rng& rng, Eigen::Index n, Eigen::Index d) {
  diratlas::RowMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Code of the diratlas::Error thrown by fn, nullopt when nothing is thrown.
template <typename Fn>
std::optional<diratlas::ErrorCode> code_of(Fn&& fn) {
  try {
    fn();
  } catch (const diratlas::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace test
