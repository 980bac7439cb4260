#include <iostream>
#include <string>
#include <vector>

#include "maeface/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return maeface::run_cli(args, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "maeface: " << e.what() << '\n';
    return 1;
  }
}
