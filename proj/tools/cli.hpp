// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace deltaforge {

// Entry point behind the `deltaforge` binary. Exit codes: 0 success,
// 1 usage error, 2 data/format error, 3 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace deltaforge
