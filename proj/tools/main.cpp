#include <iostream>
#include <string>
#include <vector>

#include "reslt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return reslt::cli::run(args, std::cout, std::cerr);
}
