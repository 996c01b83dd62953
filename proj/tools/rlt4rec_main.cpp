#include <string>
#include <vector>

#include "rlt4rec/cliapp.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return rlt4rec::run_cli(args);
}
