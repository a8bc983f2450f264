#include <iostream>
#include <string>
#include <vector>

#include "toolbridge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return toolbridge::dispatch(args, std::cout, std::cerr);
}
