#include <iostream>

#include "almond/cli.hpp"

int main(int argc, char** argv) { return almond::run_cli(argc, argv, std::cout, std::cerr); }
