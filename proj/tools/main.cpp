#include <iostream>

#include "tpnet/cli.hpp"
#include "tpnet/runtime.hpp"

int main(int argc, char** argv) {
  tpnet::tune_allocator();
  return tpnet::cli::run_cli(argc, argv, std::cout, std::cerr);
}
