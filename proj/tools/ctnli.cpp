#include "ctnli/cli.hpp"

int main(int argc, char** argv) { return ctnli::cli::cli_main(argc, argv); }
