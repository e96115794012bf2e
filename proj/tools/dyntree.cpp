#include "dyntree/cli.hpp"

int main(int argc, char** argv) { return dyntree::run_cli(argc, argv); }
