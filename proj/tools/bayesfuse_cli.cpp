#include "bayesfuse/cli.hpp"

int main(int argc, char** argv) {
    return bayesfuse::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
