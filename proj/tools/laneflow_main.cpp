#include "laneflow/cli.hpp"

int main(int argc, char** argv) { return laneflow::cli::run(argc, argv); }
