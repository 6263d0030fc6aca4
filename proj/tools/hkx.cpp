#include <iostream>

#include "hkx/cli_io.hpp"

int main(int argc, char** argv) { return hkx::run(argc, argv, std::cout, std::cerr); }
