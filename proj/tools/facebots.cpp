#include <iostream>

#include "facebots/cli.hpp"

int main(int argc, char** argv) {
  return facebots::cli::run_cli(argc, argv, std::cout, std::cerr);
}
