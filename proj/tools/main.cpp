#include "subspace_probe/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return subspace_probe::run_command(args);
}
