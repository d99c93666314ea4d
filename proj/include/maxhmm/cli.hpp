#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace maxhmm::cli {

// The full command-line surface (train, eval, check, transform, compare,
// hv-train, synth, memm-train, memm-decode). Reports go to `out` as
// machine-parsable `key value` lines; failures print one message to `err`
// and return nonzero. `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace maxhmm::cli
