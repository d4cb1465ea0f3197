#include <iostream>
#include <string>
#include <vector>

#include "datamanip/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return datamanip::run_cli(args, std::cout, std::cerr);
}
