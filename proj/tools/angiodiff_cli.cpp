#include <cstdio>

int main() {
    std::puts("angiodiff: CLI under construction");
    return 0;
}
