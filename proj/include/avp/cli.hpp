// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace avp::cli {

/// Entry point behind the binary. `args` excludes the program name. Machine
/// output goes to `out` as JSON, diagnostics to `err`. Returns 0 on success,
/// 2 for configuration errors, 1 for runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace avp::cli
