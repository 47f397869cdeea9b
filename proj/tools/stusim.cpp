#include "stusim/cli.hpp"

int main(int argc, char** argv) { return stusim::run(argc, argv); }
