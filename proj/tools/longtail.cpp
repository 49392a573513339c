#include "longtail/experiment.hpp"

int main(int argc, char** argv) { return longtail::cli_main(argc, argv); }
