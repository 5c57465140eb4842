#include "aifn/cli.hpp"

int main(int argc, char** argv) { return aifn::run_cli(argc, argv); }
