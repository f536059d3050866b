#include "airpcm/cli.hpp"

int main(int argc, char** argv) { return airpcm::run_cli(argc, argv); }
