#include <iostream>

#include "capgnn/cli.hpp"

int main(int argc, char** argv) { return capgnn::cli::run(argc, argv, std::cout, std::cerr); }
