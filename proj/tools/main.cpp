#include <string>
#include <vector>

#include "morphfit/cli.hpp"

int main(int argc, char** argv) {
  return morphfit::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
