#pragma once

#include <stdexcept>
#include <string>

namespace geoaddr {

// Broad failure classes; the CLI maps these onto exit codes.
enum class ErrorClass { Usage, Data, Numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
    ErrorClass error_class() const noexcept { return cls_; }

private:
    ErrorClass cls_;
};

#define GEOADDR_DEFINE_ERROR(Name, Class)                                  \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what)                             \
            : Error(ErrorClass::Class, std::string(#Name ": ") + what) {}  \
    };

GEOADDR_DEFINE_ERROR(ConfigError, Usage)
GEOADDR_DEFINE_ERROR(NormalizationFailed, Data)
GEOADDR_DEFINE_ERROR(InconsistentHierarchy, Data)
GEOADDR_DEFINE_ERROR(IngestError, Data)
GEOADDR_DEFINE_ERROR(NodeNotFound, Data)
GEOADDR_DEFINE_ERROR(FormatError, Data)
GEOADDR_DEFINE_ERROR(EmptyGraph, Data)
GEOADDR_DEFINE_ERROR(InconsistentSample, Data)
GEOADDR_DEFINE_ERROR(EmptyEvalSet, Data)
GEOADDR_DEFINE_ERROR(NeedTwoClusters, Data)
GEOADDR_DEFINE_ERROR(DomainError, Numerical)
GEOADDR_DEFINE_ERROR(NumericalError, Numerical)

#undef GEOADDR_DEFINE_ERROR

}  // namespace geoaddr
