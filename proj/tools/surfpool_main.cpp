#include "surfpool/cli.hpp"

int main(int argc, char** argv) { return surfpool::cli::run(argc, argv); }
