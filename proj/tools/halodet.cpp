#include <iostream>

#include "halodet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return halodet::run_cli(args, std::cout, std::cerr);
}
