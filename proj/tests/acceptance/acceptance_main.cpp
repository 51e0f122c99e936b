#include <iostream>
int main(int, char**) {
  std::cout << "acceptance: pending\n";
  return 1;
}
