#pragma once

namespace tarma {
inline constexpr const char* version = "1.0.0";
}
