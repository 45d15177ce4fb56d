#pragma once

namespace olbp {
inline constexpr const char* kVersion = "0.1.0";
}
