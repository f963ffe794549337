#pragma once

// Shared test helpers: seeded generators and a central-difference gradient
// checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmt/autodiff.hpp"
#include "mmt/parameters.hpp"

namespace mmt::test {

inline Engine rng_for(std::uint64_t seed) { return Engine(seed); }

inline double uniform(Engine& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline long uniform_int(Engine& rng, long lo, long hi) {
  return std::uniform_int_distribution<long>(lo, hi)(rng);
}

template <typename S = double>
Matrix<S> random_matrix(Engine& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(g(rng));
  return m;
}

inline std::vector<int> random_ids(Engine& rng, std::size_t n, int lo, int hi) {
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(uniform_int(rng, lo, hi));
  return v;
}

/// Random sentence over a small alphabet of words.
inline std::string random_sentence(Engine& rng, const std::vector<std::string>& words, int min_len, int max_len) {
  const auto n = uniform_int(rng, min_len, max_len);
  std::string s;
  for (long i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += words[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(words.size()) - 1))];
  }
  return s;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares backward() gradients of `loss` with central differences over
/// every entry of every parameter.
inline GradCheck check_gradients(ParameterSet<double>& params, const std::function<Tensor<double>()>& loss,
                                 double h = 1e-5, double floor = 1e-7) {
  params.zero_grad();
  backward(loss());
  GradCheck out;
  for (auto& p : params.entries()) {
    const Matrix<double> analytic = p.tensor.has_grad() ? p.tensor.grad()
                                                        : Matrix<double>::Zero(p.tensor.rows(), p.tensor.cols());
    auto& v = p.tensor.mutable_value();
    for (Index i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + h;
      double up, down;
      {
        NoGradGuard ng;
        up = loss().item();
      }
      v.data()[i] = orig - h;
      {
        NoGradGuard ng;
        down = loss().item();
      }
      v.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p.name + "[" + std::to_string(i) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("mmtlab_test_" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

}  // namespace mmt::test
