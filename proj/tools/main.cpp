#include <exception>
#include <iostream>

#include "senslab/cli.hpp"

int main(int argc, char** argv) {
  try {
    return senslab::cli::run(argc, argv, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
}
