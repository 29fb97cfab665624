#include <iostream>

#include "smad/cli.hpp"

int main(int argc, char** argv) { return smad::cli::run(argc, argv, std::cout, std::cerr); }
