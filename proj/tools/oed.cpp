#include <iostream>
#include <string>
#include <vector>

#include "oed/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return oed::cli::run(args, std::cout, std::cerr);
}
