#include <iostream>
#include <string>
#include <vector>

#include "scca/cli.hpp"
#include "scca/numkit/parallel.hpp"

int main(int argc, char** argv) {
  try {
    scca::nk::configure_process();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return scca::cli::kExitUsage;
  }
  return scca::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
