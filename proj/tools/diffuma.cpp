#include "diffuma/app.hpp"

int main(int argc, char** argv) {
  return diffuma::app::run(std::vector<std::string>(argv + 1, argv + argc));
}
