#include "cli.hpp"

int main(int argc, char** argv) { return isbci::cli::run(argc, argv); }
