#include "dgp/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return dgp::cli::run_cli(argc, argv, std::cout, std::cerr); }
