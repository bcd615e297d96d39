#include <string>
#include <vector>

#include "trinet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return trinet::cli::run(args);
}
