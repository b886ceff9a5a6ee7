#include <iostream>

#include "nasood/cli.hpp"

int main(int argc, char** argv) { return nasood::cli::run(argc, argv, std::cout, std::cerr); }
