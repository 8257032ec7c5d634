#include <iostream>
#include <string>
#include <vector>

#include "g2sqg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return g2s::dispatch(args, std::cout, std::cerr);
}
