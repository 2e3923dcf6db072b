#pragma once

namespace kdlab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace kdlab
