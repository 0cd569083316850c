#include "mcsr/cli.hpp"
#include "mcsr/platform.hpp"

int main(int argc, char** argv) {
  mcsr::tune_allocator();
  return mcsr::cli::run(argc, argv);
}
