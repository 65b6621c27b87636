#include "mcan/cli.hpp"

int main(int argc, char** argv) { return mcan::cli_main(argc, argv); }
