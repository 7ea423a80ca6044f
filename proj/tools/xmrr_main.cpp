#include <string>
#include <vector>

#include "xmrr/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return xmrr::cli::run(args);
}
