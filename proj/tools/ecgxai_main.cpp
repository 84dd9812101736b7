#include <iostream>

#include "ecgxai/cli.hpp"

int main(int argc, char** argv) { return ecgxai::cli::run(argc, argv, std::cout, std::cerr); }
