#include "adma/cli/cli.hpp"

int main(int argc, char** argv) { return adma::cli::cli_main(argc, argv); }
