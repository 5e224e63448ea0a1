#include "nbvlearn/cli.hpp"

int main(int argc, char** argv) { return nbvlearn::cli_main(argc, argv); }
