#include "captensor/cli.hpp"

int main(int argc, char** argv) { return captensor::run_cli(argc, argv); }
