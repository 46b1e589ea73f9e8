#include "pcdim/cli.hpp"

int main(int argc, char** argv) { return pcdim::run_cli(argc, argv); }
