#include <iostream>

#include "subseg/cli.hpp"

int main(int argc, char** argv) { return subseg::cli::run(argc, argv, std::cout, std::cerr); }
