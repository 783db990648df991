#pragma once

namespace r3 {
inline constexpr const char* kVersion = "0.1.0";
}
