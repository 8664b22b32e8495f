#include <string>
#include <vector>

#include "longipred/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return longipred::cli::run(args);
}
