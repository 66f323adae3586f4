#include "dyadperm/cli_io.hpp"

int main(int argc, char** argv) { return dyadperm::cli_dispatch(argc, argv); }
