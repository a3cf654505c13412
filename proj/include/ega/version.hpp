#pragma once

namespace ega {

inline constexpr const char* kVersion = "0.1.0";

} // namespace ega
