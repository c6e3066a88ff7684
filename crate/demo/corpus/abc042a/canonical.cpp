#include <algorithm>
#include <cstdio>

int main() {
    int v[3];
    if (std::scanf("%d %d %d", &v[0], &v[1], &v[2]) != 3) return 1;
    std::sort(v, v + 3);
    std::puts(v[0] == 5 && v[1] == 5 && v[2] == 7 ? "YES" : "NO");
    return 0;
}
