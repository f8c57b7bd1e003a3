#include "kfacbench/cli.hpp"

int main(int argc, char** argv) {
    return kfacbench::run_cli(argc, argv);
}
