#pragma once

#include <span>
#include <string>
#include <vector>

namespace sgz {

// Mutable named view of one parameter (or gradient) array.
struct ParamRef {
  std::string name;
  std::span<double> values;
};

struct ConstParamRef {
  std::string name;
  std::span<const double> values;
};

}  // namespace sgz
