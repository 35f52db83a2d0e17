#include <iostream>

#include "protoshot/cli.hpp"

int main(int argc, char** argv) { return protoshot::cli::run(argc, argv, std::cout, std::cerr); }
