#include <iostream>
#include <string>
#include <vector>

#include "graphfuse/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return graphfuse::cli::run_command(std::move(args), std::cout, std::cerr);
}
