#include "sftgo/cli.hpp"

int main(int argc, char** argv) { return sftgo::cli::cli_main(argc, argv); }
