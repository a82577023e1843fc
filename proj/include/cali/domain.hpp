#pragma once

#include <string_view>

namespace cali {

enum class Domain { Source, Target, Mixed };

constexpr std::string_view domain_name(Domain d) noexcept {
  switch (d) {
    case Domain::Source: return "source";
    case Domain::Target: return "target";
    case Domain::Mixed: return "mixed";
  }
  return "unknown";
}

}  // namespace cali
