import sys

tokens = sys.stdin.read().split()
try:
    values = [int(t) for t in tokens]
except ValueError:
    sys.exit(1)
sys.exit(0 if len(values) == 3 and all(1 <= v <= 10 for v in values) else 1)
