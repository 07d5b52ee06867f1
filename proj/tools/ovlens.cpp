#include "ovlens/cli.hpp"

int main(int argc, char** argv) { return ovlens::cli::run(argc, argv); }
