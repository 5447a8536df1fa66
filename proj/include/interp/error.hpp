#pragma once

#include <stdexcept>
#include <string>

namespace interp {

/// Exception carrying a stable, machine-matchable error code such as
/// "shape-mismatch" or "rename-missing:layers_name", plus free-form detail.
class Error : public std::runtime_error {
public:
    explicit Error(std::string code, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? code : code + ": " + detail),
          code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

}  // namespace interp
