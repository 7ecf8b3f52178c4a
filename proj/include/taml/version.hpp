#pragma once

#include <string_view>

namespace taml {

inline constexpr std::string_view kEngineVersion = "taml 0.1.0";

}  // namespace taml
