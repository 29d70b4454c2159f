#include <iostream>
#include <string>
#include <vector>

#include "sopmas/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sopmas::run_cli(args, std::cout, std::cerr);
}
