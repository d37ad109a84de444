#include <iostream>

#include "silk/cli.hpp"

int main(int argc, char** argv) { return silk::run_cli(argc, argv, std::cout, std::cerr); }
