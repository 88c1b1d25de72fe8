#include <iostream>

#include "urlt/cli.hpp"

int main(int argc, char** argv) { return urlt::run_cli(argc, argv, std::cout, std::cerr); }
