#pragma once

#include <string>
#include <string_view>

namespace fineprint::detail {

// Template text compiled in from prompts/v1/<name>.txt.
std::string_view prompt_text(const std::string& name);

}  // namespace fineprint::detail
