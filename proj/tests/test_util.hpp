#pragma once

#include <vector>

#include "accent_ssl/numerics/rng.hpp"
#include "accent_ssl/numerics/tape.hpp"
#include "accent_ssl/numerics/tensor.hpp"

namespace accent_ssl::testing {

inline Tensor<double> random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  auto t = Tensor<double>::matrix(rows, cols);
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

inline Parameter<double> random_param(Rng& rng, const std::string& name, std::size_t rows,
                                      std::size_t cols, double scale = 1.0) {
  return Parameter<double>{name, random_tensor(rng, rows, cols, scale), true};
}

}  // namespace accent_ssl::testing

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace accent_ssl::testing {

// Fresh scratch directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("accent_ssl_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace accent_ssl::testing
