#!/usr/bin/env python3
"""Generate the bundled synthetic corpus in testdata/synthetic/.

Eight problem families, each instantiated with ten constants, give 80
problems. Every problem gets 4-8 candidates drawn from planted correct,
intent-error and execution-error variants. Nothing here loops or sleeps, so
executing the corpus never hits a timeout.

Usage: python3 scripts/make_synthetic_corpus.py [--seed 7]
"""

import argparse
import json
import pathlib
import random

OUT = pathlib.Path(__file__).resolve().parent.parent / "testdata" / "synthetic"
DIFFICULTIES = ["introductory", "interview", "competition"]


def mul(k):
    desc = f"Read an integer n and print n times {k}."
    tests = [(str(x), str(x * k)) for x in (3, -2, 10)]
    correct = [
        f"print(int(input()) * {k})",
        f"n = int(input())\nprint(n * {k})",
        f"n = int(input())\nprint({k} * n)",
    ]
    intent = [
        f"print(int(input()) + {k})",
        f"n = int(input())\nprint(n * {k} + 1)",
        "print(int(input()))",
    ]
    exec_ = [
        f"print(int(input().split()) * {k})",
        f"n = int(input())\nprint(m * {k})",
        f"n = int(input())\nprint(n * {k} / 0)",
        f"print(int(input()) * {k}",
    ]
    return desc, tests, correct, intent, exec_


def add(k):
    desc = f"Read an integer n and print n plus {k}."
    tests = [(str(x), str(x + k)) for x in (1, 0, 41)]
    correct = [
        f"print(int(input()) + {k})",
        f"n = int(input())\nprint(n + {k})",
        f"n = int(input())\nn += {k}\nprint(n)",
    ]
    intent = [
        f"print(int(input()) - {k})",
        f"n = int(input())\nprint(n + {k} - 1)",
        f"print({k})",
    ]
    exec_ = [
        f"n = input()\nprint(n + {k})",
        f"n = int(input())\nprint(total + {k})",
        f"n = int(input())\nprint([n][{k}])",
        f"print(int(input()) + {k}))",
    ]
    return desc, tests, correct, intent, exec_


def sum_scaled(k):
    desc = f"Read integers on one line and print their sum times {k}."
    data = ["1 2 3", "5", "10 -4 2"]
    tests = [(d, str(sum(map(int, d.split())) * k)) for d in data]
    correct = [
        f"print(sum(map(int, input().split())) * {k})",
        f"xs = list(map(int, input().split()))\nprint(sum(xs) * {k})",
        f"total = 0\nfor t in input().split():\n    total += int(t)\nprint(total * {k})",
    ]
    intent = [
        f"print(sum(map(int, input().split())) + {k})",
        f"xs = list(map(int, input().split()))\nprint(max(xs) * {k})",
        f"xs = list(map(int, input().split()))\nprint(sum(xs[1:]) * {k})",
    ]
    exec_ = [
        f"print(sum(input().split()) * {k})",
        f"xs = list(map(int, input().split()))\nprint(sum(xs) * {k} // 0)",
        f"xs = list(map(int, input().split()))\nprint(xs[9] * {k})",
        f"total = 0\nfor t in input().split()\n    total += int(t)\nprint(total * {k})",
    ]
    return desc, tests, correct, intent, exec_


def max_shift(k):
    desc = f"Read integers on one line and print the largest one plus {k}."
    data = ["3 9 1", "-5 -2", "7"]
    tests = [(d, str(max(map(int, d.split())) + k)) for d in data]
    correct = [
        f"print(max(map(int, input().split())) + {k})",
        f"xs = [int(t) for t in input().split()]\nprint(max(xs) + {k})",
        f"xs = sorted(map(int, input().split()))\nprint(xs[-1] + {k})",
    ]
    intent = [
        f"print(min(map(int, input().split())) + {k})",
        f"xs = sorted(map(int, input().split()))\nprint(xs[0] + {k})",
        f"xs = [int(t) for t in input().split()]\nprint(max(xs) - {k})",
    ]
    exec_ = [
        f"print(max(input().split()) + {k})",
        f"xs = [int(t) for t in input().split()]\nprint(xs.max() + {k})",
        f"xs = sorted(map(int, input().split()))\nprint(xs[-1] + {k} / 0)",
        f"xs = [int(t) for t in input().split(]\nprint(max(xs) + {k})",
    ]
    return desc, tests, correct, intent, exec_


def repeat(k):
    desc = f"Read a word and print it repeated {k} times with no spaces."
    tests = [(w, w * k) for w in ("ab", "x", "code")]
    correct = [
        f"print(input() * {k})",
        f"w = input()\nprint(w * {k})",
        f"w = input()\nprint(''.join([w] * {k}))",
    ]
    intent = [
        f"print(input() * {k + 1})",
        f"w = input()\nprint(' '.join([w] * {k}))",
        "print(input())",
    ]
    exec_ = [
        f"w = input()\nprint(w + {k})",
        f"w = input()\nprint(word * {k})",
        f"w = input()\nprint(w[{k + 10}] * {k})",
        f"print(input() * {k}",
    ]
    return desc, tests, correct, intent, exec_


def count_char(k):
    ch = "abcdefghij"[k % 10]
    desc = f"Read a word and print how many times the letter {ch} occurs in it."
    words = [ch * 2 + "zz" + ch, "zzz", ch]
    tests = [(w, str(w.count(ch))) for w in words]
    correct = [
        f"print(input().count('{ch}'))",
        f"w = input()\nprint(w.count('{ch}'))",
        f"w = input()\nprint(sum(1 for c in w if c == '{ch}'))",
    ]
    intent = [
        f"print(len(input()))",
        f"w = input()\nprint(w.count('{ch}') + 1)",
        f"w = input()\nprint(sum(1 for c in w if c != '{ch}'))",
    ]
    exec_ = [
        f"w = input()\nprint(w.count({ch}))",
        f"w = input()\nprint(w.counts('{ch}'))",
        f"w = input()\nprint(len(w) // (len(w) - len(w)))",
        f"w = input()\nprint(w.count('{ch}')))",
    ]
    return desc, tests, correct, intent, exec_


def prefix(k):
    desc = f"Read a word and print its first {k} characters."
    words = ["abcdefghijkl", "pythonprogramming", "zyxwvutsrqpo"]
    tests = [(w, w[:k]) for w in words]
    correct = [
        f"print(input()[:{k}])",
        f"w = input()\nprint(w[:{k}])",
        f"w = input()\nprint(w[0:{k}])",
    ]
    intent = [
        f"print(input()[:{k + 1}])",
        f"w = input()\nprint(w[{k}:])",
        f"w = input()\nprint(w[-{k}:])",
    ]
    exec_ = [
        f"w = int(input())\nprint(w[:{k}])",
        f"w = input()\nprint(text[:{k}])",
        f"w = input()\nprint(w[:{k}] / 0)",
        f"w = input(\nprint(w[:{k}])",
    ]
    return desc, tests, correct, intent, exec_


def mod_sum(k):
    m = k + 2
    desc = f"Read two integers a and b and print (a + b) modulo {m}."
    pairs = [(3, 4), (10, 20), (0, 1)]
    tests = [(f"{a} {b}", str((a + b) % m)) for a, b in pairs]
    correct = [
        f"a, b = map(int, input().split())\nprint((a + b) % {m})",
        f"xs = list(map(int, input().split()))\nprint(sum(xs) % {m})",
        f"a, b = [int(t) for t in input().split()]\nprint((a + b) % {m})",
    ]
    intent = [
        f"a, b = map(int, input().split())\nprint(a + b % {m})",
        f"a, b = map(int, input().split())\nprint((a * b) % {m})",
        f"a, b = map(int, input().split())\nprint((a + b) // {m})",
    ]
    exec_ = [
        f"a, b = input().split()\nprint((a + b) % {m})",
        f"a, b, c = map(int, input().split())\nprint((a + b) % {m})",
        f"a, b = map(int, input().split())\nprint((a + b) % 0)",
        f"a, b = map(int, input().split())\nprint((a + b) % {m}",
    ]
    return desc, tests, correct, intent, exec_


FAMILIES = [mul, add, sum_scaled, max_shift, repeat, count_char, prefix, mod_sum]


def build(seed):
    rng = random.Random(seed)
    problems, candidates = [], []
    for fam in FAMILIES:
        for k in range(2, 12):
            pid = f"{fam.__name__}_{k:02d}"
            desc, tests, correct, intent, exec_ = fam(k)
            problems.append(
                {
                    "problem_id": pid,
                    "description": desc,
                    "tests": [{"input": i, "expected_output": o} for i, o in tests],
                    "difficulty": DIFFICULTIES[k % 3],
                }
            )
            n = rng.randint(4, 8)
            # about one problem in eight has no correct candidate at all
            n_correct = 0 if rng.random() < 0.125 else rng.randint(1, min(3, n - 2))
            pool = rng.sample(correct, n_correct)
            wrong = intent + exec_
            n_wrong = n - n_correct
            pool += rng.sample(wrong, min(n_wrong, len(wrong)))
            # the odd exact duplicate exercises deduplication
            pool += [rng.choice(pool) for _ in range(n_wrong - len(wrong))]
            rng.shuffle(pool)
            for cid, src in enumerate(pool):
                candidates.append({"problem_id": pid, "candidate_id": cid, "source": src + "\n"})
    return problems, candidates


def write_jsonl(path, rows):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    problems, candidates = build(args.seed)
    write_jsonl(OUT / "problems.jsonl", problems)
    write_jsonl(OUT / "candidates.jsonl", candidates)
    print(f"{len(problems)} problems, {len(candidates)} candidates -> {OUT}")


if __name__ == "__main__":
    main()
