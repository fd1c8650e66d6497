#pragma once

#include <stdexcept>
#include <string>

namespace gradmatch {

// Dataset / file errors.
struct BadMagic : std::runtime_error {
  explicit BadMagic(const std::string& msg) : std::runtime_error(msg) {}
};
struct CountMismatch : std::runtime_error {
  explicit CountMismatch(const std::string& msg) : std::runtime_error(msg) {}
};
struct TruncatedFile : std::runtime_error {
  explicit TruncatedFile(const std::string& msg) : std::runtime_error(msg) {}
};
struct EmptyResult : std::runtime_error {
  explicit EmptyResult(const std::string& msg) : std::runtime_error(msg) {}
};
struct EmptyClass : std::runtime_error {
  explicit EmptyClass(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical errors.
struct NonFiniteGradient : std::runtime_error {
  explicit NonFiniteGradient(const std::string& msg) : std::runtime_error(msg) {}
};
struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& msg) : std::runtime_error(msg) {}
};
struct NoConvergence : std::runtime_error {
  int max_iters;
  NoConvergence(const std::string& msg, int iters)
      : std::runtime_error(msg), max_iters(iters) {}
};
struct DegenerateBank : std::runtime_error {
  explicit DegenerateBank(const std::string& msg) : std::runtime_error(msg) {}
};
struct ZeroGradient : std::runtime_error {
  explicit ZeroGradient(const std::string& msg) : std::runtime_error(msg) {}
};
struct TooLarge : std::runtime_error {
  explicit TooLarge(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gradmatch
