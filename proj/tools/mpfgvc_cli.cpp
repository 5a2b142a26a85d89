#include <iostream>

int main() {
    std::cout << "mpfgvc: command-line interface placeholder\n";
    return 0;
}
