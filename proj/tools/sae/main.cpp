#include <iostream>

#include "sae/cli.hpp"

int main(int argc, char** argv) { return sae::cli::run(argc, argv, std::cout, std::cerr); }
