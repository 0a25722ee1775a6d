#pragma once

#include <stdexcept>
#include <string>

namespace ddt {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define DDT_DEFINE_ERROR(Name)                                                 \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string &what) : Error(#Name ": " + what) {}       \
  };

DDT_DEFINE_ERROR(DimensionError)
DDT_DEFINE_ERROR(IndexError)
DDT_DEFINE_ERROR(DomainError)
DDT_DEFINE_ERROR(ConfigError)
DDT_DEFINE_ERROR(ShapeError)
DDT_DEFINE_ERROR(IoError)
DDT_DEFINE_ERROR(FormatError)
DDT_DEFINE_ERROR(ManifestError)

#undef DDT_DEFINE_ERROR

} // namespace ddt
