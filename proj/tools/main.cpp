#include "cli.hpp"

int main(int argc, char **argv) { return deformsplat::run_cli(argc, argv); }
