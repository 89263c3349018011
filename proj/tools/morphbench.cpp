#include "morphbench/cli.hpp"

int main(int argc, char** argv) { return morphbench::cli::run_cli(argc, argv); }
