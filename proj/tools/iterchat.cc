#include <iostream>
#include <string>
#include <vector>

#include "iterchat/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return iterchat::run_cli(args, std::cout, std::cerr);
}
