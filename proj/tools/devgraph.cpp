#include "devgraph/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return devgraph::cli::run(argc, argv, std::cout, std::cerr); }
