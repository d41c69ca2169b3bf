#pragma once

#include <cstdint>
#include <vector>

namespace ccodec {

inline constexpr int kSampleNodes = 100;
inline constexpr int kNumClasses = 5;
inline constexpr int kNonNeuronal = 4;

// Dense square binary matrix; row = presynaptic, column = postsynaptic.
class Adjacency {
 public:
  Adjacency() = default;
  explicit Adjacency(int n) : n_(n), bits_(static_cast<std::size_t>(n) * n, 0) {}

  [[nodiscard]] int size() const { return n_; }
  [[nodiscard]] bool operator()(int i, int j) const { return bits_[index(i, j)] != 0; }
  void set(int i, int j, bool value = true) { bits_[index(i, j)] = value ? 1 : 0; }

  [[nodiscard]] const std::uint8_t* row(int i) const { return bits_.data() + index(i, 0); }

  // A | A^T
  [[nodiscard]] Adjacency symmetrized() const {
    Adjacency s(n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        if ((*this)(i, j) || (*this)(j, i)) s.set(i, j);
    return s;
  }

  friend bool operator==(const Adjacency&, const Adjacency&) = default;

 private:
  [[nodiscard]] std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j);
  }
  int n_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace ccodec
