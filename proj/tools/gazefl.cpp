#include <iostream>

#include "gazefl/cli.hpp"

int main(int argc, char** argv) {
  return gazefl::cli_main(argc, argv, std::cout, std::cerr);
}
