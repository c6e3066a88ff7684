"""Small helper library available to generated input generators."""
import random
import sys

__all__ = [
    "seed_from_argv", "rand_int", "rand_array", "rand_distinct", "rand_perm",
    "rand_string", "pick", "join", "random",
]


def seed_from_argv():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    random.seed(seed)
    return seed


def rand_int(lo, hi):
    return random.randint(lo, hi)


def rand_array(n, lo, hi):
    return [random.randint(lo, hi) for _ in range(n)]


def rand_distinct(n, lo, hi):
    return random.sample(range(lo, hi + 1), n)


def rand_perm(n):
    p = list(range(1, n + 1))
    random.shuffle(p)
    return p


def rand_string(n, alphabet="abcdefghijklmnopqrstuvwxyz"):
    return "".join(random.choice(alphabet) for _ in range(n))


def pick(seq):
    return random.choice(list(seq))


def join(values, sep=" "):
    return sep.join(str(v) for v in values)
