#include "rmcse/experiment.hpp"

int main(int argc, char** argv) { return rmcse::cli_dispatch(argc, argv); }
