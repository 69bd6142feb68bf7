#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace semaug {

/// Bad argument: wrong shape, empty input, out-of-range parameter.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A text shift whose source and target embeddings coincide.
class DegenerateShift : public std::runtime_error {
 public:
  explicit DegenerateShift(const std::string& what, std::size_t prompt_id = 0)
      : std::runtime_error(what), prompt_id_(prompt_id) {}
  std::size_t prompt_id() const noexcept { return prompt_id_; }

 private:
  std::size_t prompt_id_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent dataset / archive content. The message names the
/// offending record.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateSpectrum : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Divergence : public std::runtime_error {
 public:
  Divergence(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace semaug
