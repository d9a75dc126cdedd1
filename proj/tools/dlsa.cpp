#include <string>
#include <vector>

#include "dlsa/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dlsa::cli::run(args);
}
