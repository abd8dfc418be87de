#include <string>
#include <vector>

#include "rau/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rau::cli::run(args);
}
