#include <iostream>
#include <string>
#include <vector>

#include "drofolio/cli.h"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return drofolio::run_cli(args, std::cout, std::cerr);
}
