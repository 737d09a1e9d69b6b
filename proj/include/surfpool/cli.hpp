#pragma once

namespace surfpool::cli {

/// Entry point behind the `surfpool` binary. Exit codes: 0 success,
/// 1 usage error, 2 data error, 3 numerical error.
int run(int argc, const char* const* argv);

}  // namespace surfpool::cli
