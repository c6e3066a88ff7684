#include <cstdio>

int main() {
    int a, b, c;
    if (std::scanf("%d %d %d", &a, &b, &c) != 3) return 1;
    std::puts(a + b + c == 17 ? "YES" : "NO");
    return 0;
}
