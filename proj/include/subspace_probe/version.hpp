#pragma once

namespace subspace_probe {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace subspace_probe
