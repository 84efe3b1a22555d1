#include "commands.hpp"

int main(int argc, char **argv) { return t1map::cli::run_cli(argc, argv); }
