#include <iostream>

#include "reer/cli.hpp"

int main(int argc, char** argv) { return reer::run_cli(argc, argv, std::cout, std::cerr); }
