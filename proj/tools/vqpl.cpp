// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "vqpl/cli.hpp"

int main(int argc, char** argv) { return vqpl::cli::run(argc, argv, std::cout, std::cerr); }
