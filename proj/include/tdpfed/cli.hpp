#ifndef TDPFED_CLI_HPP_
#define TDPFED_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace tdpfed {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitIo = 4,
};

/// Entry point of the tdpfed command; args excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tdpfed

#endif  // TDPFED_CLI_HPP_
