#include <iostream>

#include "s2tl/cli.hpp"

int main(int argc, char** argv) {
  return s2tl::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
