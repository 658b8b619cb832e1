#include <vector>

#include "svkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return svkit::cli::run(args);
}
