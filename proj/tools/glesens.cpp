#include "glesens/cli.hpp"

int main(int argc, char** argv) { return glesens::cli::main(argc, argv); }
