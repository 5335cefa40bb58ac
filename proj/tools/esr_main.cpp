#include <iostream>

#include "esr/cli.hpp"

int main(int argc, char** argv) { return esr::run_cli(argc, argv, std::cout, std::cerr); }
