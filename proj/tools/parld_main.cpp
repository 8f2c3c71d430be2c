#include <vector>

#include "parld/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return parld::run_cli(args);
}
