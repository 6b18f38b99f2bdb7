#include "cli.hpp"

int main(int argc, char** argv) { return gs4d::cli::run_cli(argc, argv); }
