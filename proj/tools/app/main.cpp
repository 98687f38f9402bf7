#include "cli.hpp"

int main(int argc, char** argv) { return blastlime::cli::run_cli(argc, argv); }
