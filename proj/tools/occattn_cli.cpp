#include <iostream>
#include <string>
#include <vector>

#include "occattn/cli.hpp"
#include "occattn/runtime.hpp"

int main(int argc, char** argv) {
  occattn::tune_allocator();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return occattn::run_cli(args, std::cout, std::cerr);
}
