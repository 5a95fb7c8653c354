#pragma once

#include <array>

namespace vslam {

extern const std::array<int, 1024> kOrbPattern;

}  // namespace vslam
