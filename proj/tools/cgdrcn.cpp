#include <iostream>

#include "cgdrcn/cli.hpp"

int main(int argc, char** argv) { return cgdrcn::run_cli(argc, argv, std::cout, std::cerr); }
