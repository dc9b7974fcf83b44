#include "cli/commands.h"

int main(int argc, char** argv) { return uap::cli::Main(argc, argv); }
