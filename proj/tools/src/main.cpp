#include <iostream>

#include "dfd/cli.hpp"

int main(int argc, char** argv) { return dfd::cli::run(argc, argv, std::cout, std::cerr); }
