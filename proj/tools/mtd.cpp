#include "mtd/cli/run.hpp"

int main(int argc, char** argv) { return mtd::cli::run(argc, argv); }
