#include <iostream>
#include <string>
#include <vector>

#include "tkvseg/cli/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tkvseg::cli::run_cli(args, std::cout, std::cerr);
}
