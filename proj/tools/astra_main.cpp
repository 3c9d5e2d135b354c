#include <iostream>
#include <string>
#include <vector>

#include "astra/service/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return astra::service::run_cli(args, std::cout, std::cerr);
}
