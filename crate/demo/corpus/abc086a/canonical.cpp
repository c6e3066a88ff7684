#include <cstdio>

int main() {
    long long a, b;
    if (std::scanf("%lld %lld", &a, &b) != 2) return 1;
    std::puts((a * b) % 2 == 0 ? "Even" : "Odd");
    return 0;
}
