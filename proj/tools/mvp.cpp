#include <iostream>

#include "mvp/cli/commands.hpp"

int main(int argc, char** argv) { return mvp::cli::run_cli(argc, argv, std::cout, std::cerr); }
