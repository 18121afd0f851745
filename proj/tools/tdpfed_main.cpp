#include <iostream>
#include <string>
#include <vector>

#include "tdpfed/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tdpfed::cli_main(args, std::cout, std::cerr);
}
