#include "lpdesc/cli.hpp"

int main(int argc, char** argv) { return lpdesc::cli_main(argc, argv); }
