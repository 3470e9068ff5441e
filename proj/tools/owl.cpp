#include <iostream>

#include "owl/cli.hpp"

int main(int argc, char** argv) { return owl::cli::run_cli(argc, argv, std::cout, std::cerr); }
