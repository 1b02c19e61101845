#pragma once

#include <stdexcept>
#include <string>

namespace movgan {

// Error categories map 1:1 onto CLI exit codes and the machine-parsable
// "error category=... message=..." line printed on failure.
enum class ErrorCategory {
    kValidation,     // bad user input / violated invariant (exit 3)
    kConfiguration,  // inconsistent config or shape mismatch (exit 3)
    kParse,          // malformed file content (exit 3)
    kInput,          // bad argument to an operation (exit 3)
    kRuntime,        // everything else (exit 1)
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

    const char* category_name() const {
        switch (category_) {
            case ErrorCategory::kValidation: return "validation";
            case ErrorCategory::kConfiguration: return "configuration";
            case ErrorCategory::kParse: return "parse";
            case ErrorCategory::kInput: return "input";
            case ErrorCategory::kRuntime: return "runtime";
        }
        return "runtime";
    }

  private:
    ErrorCategory category_;
};

class ValidationError : public Error {
  public:
    explicit ValidationError(const std::string& m) : Error(ErrorCategory::kValidation, m) {}
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& m) : Error(ErrorCategory::kConfiguration, m) {}
};

class ParseError : public Error {
  public:
    explicit ParseError(const std::string& m) : Error(ErrorCategory::kParse, m) {}
};

class InputError : public Error {
  public:
    explicit InputError(const std::string& m) : Error(ErrorCategory::kInput, m) {}
};

}  // namespace movgan
