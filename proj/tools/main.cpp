#include "roomtwin/cli.hpp"

int main(int argc, char** argv) { return roomtwin::cli_main(argc, argv); }
