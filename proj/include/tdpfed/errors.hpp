#ifndef TDPFED_ERRORS_HPP_
#define TDPFED_ERRORS_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tdpfed {

/// Invalid configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN or Inf in a loss or parameter. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::size_t round, std::size_t client, std::size_t layer, const std::string& what)
      : std::runtime_error("non-finite " + what + " at round " + std::to_string(round) +
                           ", client " + std::to_string(client) + ", layer " +
                           std::to_string(layer)),
        round_(round),
        client_(client),
        layer_(layer) {}

  std::size_t round() const { return round_; }
  std::size_t client() const { return client_; }
  std::size_t layer() const { return layer_; }

 private:
  std::size_t round_, client_, layer_;
};

/// File access or format failure. CLI exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tdpfed

#endif  // TDPFED_ERRORS_HPP_
