#include "ordirank/cli.hpp"

int main(int argc, char** argv) { return ordirank::cli::run(argc, argv); }
