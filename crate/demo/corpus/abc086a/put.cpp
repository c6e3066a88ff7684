#include <cstdio>

int main() {
    int a, b;
    if (std::scanf("%d %d", &a, &b) != 2) return 1;
    std::puts(a % 2 == 0 ? "Even" : "Odd");
    return 0;
}
