#include <iostream>

#include "fpml/cli.hpp"

int main(int argc, char** argv) { return fpml::run_cli(argc, argv, std::cout, std::cerr); }
