#ifndef CORTICAL_ERRORS_HPP
#define CORTICAL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cortical {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid input or configuration. The CLI maps these to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Failure of a numerical procedure on valid input. The CLI maps these to exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

#define CORTICAL_ERROR(Name, Base)                                   \
    class Name : public Base {                                       \
    public:                                                          \
        explicit Name(const std::string& what) : Base(#Name ": " + what) {} \
    };

CORTICAL_ERROR(GridTooCoarse, ValidationError)
CORTICAL_ERROR(GridTooSmall, ValidationError)
CORTICAL_ERROR(GridMismatch, ValidationError)
CORTICAL_ERROR(NodeNotOnGrid, ValidationError)
CORTICAL_ERROR(ConfigError, ValidationError)

CORTICAL_ERROR(LeftDomain, NumericError)
CORTICAL_ERROR(NoConvergence, NumericError)
CORTICAL_ERROR(OnExceptionalSet, NumericError)
CORTICAL_ERROR(RadiusUnresolved, NumericError)
CORTICAL_ERROR(EmptyRow, NumericError)
CORTICAL_ERROR(ZeroRowMass, NumericError)
CORTICAL_ERROR(UnstableStep, NumericError)

#undef CORTICAL_ERROR

class DisconnectedGraph : public NumericError {
public:
    DisconnectedGraph(int components, const std::string& what)
        : NumericError("DisconnectedGraph: " + what + " (" + std::to_string(components) +
                       " components)"),
          components_(components) {}
    int components() const { return components_; }

private:
    int components_;
};

}  // namespace cortical

#endif
