#pragma once

namespace vdg {
inline constexpr const char* kVersion = "0.1.0";
}
