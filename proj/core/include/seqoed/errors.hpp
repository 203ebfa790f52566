#pragma once

#include <stdexcept>
#include <string>

namespace seqoed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Contract violations on histories and designs.
class HorizonExceeded : public Error { using Error::Error; };
class BoundsViolation : public Error { using Error::Error; };
class LengthMismatch : public Error { using Error::Error; };
class ShapeMismatch : public Error { using Error::Error; };

// Inference.
class UnsupportedPrior : public Error { using Error::Error; };
class DegeneratePosterior : public Error { using Error::Error; };
class GridMismatch : public Error { using Error::Error; };

// Forward models.
class ModelFailure : public Error { using Error::Error; };
class OutOfDomain : public ModelFailure { using ModelFailure::ModelFailure; };
class StabilityViolation : public ModelFailure { using ModelFailure::ModelFailure; };

/// Raised when a numerical quantity (loss, gradient, policy output) stops being finite.
class NumericalFailure : public Error { using Error::Error; };
class NonFiniteGradient : public NumericalFailure { using NumericalFailure::NumericalFailure; };
class NonFinitePolicyOutput : public NumericalFailure { using NumericalFailure::NumericalFailure; };

// Configuration and artifacts.
class ConfigError : public Error { using Error::Error; };
class ArchMismatch : public Error { using Error::Error; };

}  // namespace seqoed
