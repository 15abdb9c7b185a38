#include "attnseg/cli.hpp"

int main(int argc, char** argv) {
    return attnseg::run_cli(argc, argv);
}
