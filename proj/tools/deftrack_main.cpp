#include <iostream>

#include "deftrack/cli.hpp"

int main(int argc, char** argv) {
  return deftrack::run_cli(argc, argv, std::cout, std::cerr);
}
