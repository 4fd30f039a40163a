#include "pvc/cli.hpp"

int main(int argc, char** argv) { return pvc::cli::run_cli(argc, argv); }
