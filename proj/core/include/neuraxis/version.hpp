#pragma once

namespace neuraxis {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace neuraxis
