#include "cocoa/cli/cli.hpp"

int main(int argc, char** argv) { return cocoa::cli::run(argc, argv); }
