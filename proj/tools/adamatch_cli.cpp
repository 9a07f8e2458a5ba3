#include <cstdio>

int main() {
  std::puts("adamatch: command-line interface (under construction)");
  return 0;
}
