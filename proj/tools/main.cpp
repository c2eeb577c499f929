#include "cli.hpp"

int main(int argc, char** argv) { return mfsr::cli_dispatch(argc, argv); }
