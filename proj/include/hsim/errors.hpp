#pragma once

#include <stdexcept>
#include <string>

namespace hsim {

struct InvalidStateError : std::runtime_error {
  explicit InvalidStateError(const std::string& what) : std::runtime_error(what) {}
};

struct HistoryDiscontinuityError : std::runtime_error {
  explicit HistoryDiscontinuityError(const std::string& what) : std::runtime_error(what) {}
};

struct OffMapError : std::runtime_error {
  explicit OffMapError(const std::string& what) : std::runtime_error(what) {}
};

struct ArityError : std::runtime_error {
  explicit ArityError(const std::string& what) : std::runtime_error(what) {}
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct OrderingError : std::runtime_error {
  explicit OrderingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hsim
