#include <iostream>

#include "mimil/cli.hpp"

int main(int argc, char** argv) { return mimil::cli::run(argc, argv, std::cin, std::cout, std::cerr); }
