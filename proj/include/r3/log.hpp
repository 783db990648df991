#pragma once

#include <functional>
#include <string_view>

namespace r3 {

/// Warnings go to stderr unless a sink is installed (tests capture them).
using WarningSink = std::function<void(std::string_view)>;

void warn(std::string_view message);
void set_warning_sink(WarningSink sink);  // empty sink restores stderr
}  // namespace r3
