#include <iostream>

#include "pifi/experiment/cli.hpp"

int main(int argc, char** argv) { return pifi::experiment::cli_main(argc, argv, std::cout, std::cerr); }
