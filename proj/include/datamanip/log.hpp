#pragma once

#include <functional>
#include <string>

namespace datamanip {

// Minimal warning channel. Defaults to stderr; tests and bindings can
// redirect or silence it.
using WarningSink = std::function<void(const std::string&)>;

void warn(const std::string& message);
WarningSink set_warning_sink(WarningSink sink);
std::size_t warning_count();

}  // namespace datamanip
