#include <iostream>
#include <string>
#include <vector>

#include "fdbq/cli.hpp"

int main(int argc, char** argv) {
    return fdbq::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
