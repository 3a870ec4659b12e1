#include <string>
#include <vector>

#include "tsadapt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tsadapt::run_cli(args);
}
