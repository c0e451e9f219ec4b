#pragma once

#include <stdexcept>
#include <string>

namespace wpt {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A configuration error: bad parameters, violated invariants.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A numerical failure during simulation.
class NumericalError : public Error {
public:
    using Error::Error;
};

// --- circuit-core ---

class NonPhysicalCoupling : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DimensionMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConductionFixpointDivergence : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class StepTooLarge : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class WindowTooLong : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// --- swcap-math ---

class DutyOutOfRange : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class FrequencyOutOfRange : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InfeasibleTargets : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// --- sensing ---

class InsufficientEdges : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// --- scenario-harness ---

class ParseError : public Error {
public:
    using Error::Error;
};

}  // namespace wpt
