#include "ambit/runner.hpp"

int main(int argc, char** argv) { return ambit::cli_main(argc, argv); }
