#include <iostream>

#include "hmhi/cli.hpp"

int main(int argc, char** argv) {
  return hmhi::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
