#include <iostream>

#include "cali/cli/cli.hpp"

int main(int argc, char** argv) { return cali::cli::dispatch(argc, argv, std::cout, std::cerr); }
