#include <iostream>

#include "docsynth/commands.hpp"

int main(int argc, char** argv) { return docsynth::run_cli(argc, argv, std::cout, std::cerr); }
