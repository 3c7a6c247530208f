#pragma once

namespace cvmdi {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cvmdi
