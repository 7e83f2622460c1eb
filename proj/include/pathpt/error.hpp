#pragma once

#include <stdexcept>
#include <string>

namespace pathpt {

// Invalid configuration values (dims, hyperparameters, registries).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed arguments to an operation (zero-norm vectors, shape mismatch, ...).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// On-disk data that cannot be read back (feature store, checkpoints).
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A metric that has no value for the given input, e.g. AUC on a single-class mask.
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Optimization diverged (non-finite loss).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pathpt
