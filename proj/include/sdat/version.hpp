#pragma once

namespace sdat {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sdat
